//! TCP transport for the BSE and CTR services: one thread per connection,
//! any number of frames per connection.

use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use parking_lot::Mutex;

use super::service::{BseService, CtrService, TableSource};
use super::wire::{error_code, read_frame, write_frame, Message, ScoreRequest, ScoreResponse, ScoredCandidate, UpdateSequence};
use crate::attention::BehaviorSequence;
use crate::error::{Error, Result};
use crate::vector::ItemVector;

/// A running accept loop. Dropping the handle stops it.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.join.is_some() {
            self.stop_inner();
        }
    }
}

fn spawn_server<H>(listener: TcpListener, handler: H) -> std::io::Result<ServerHandle>
where
    H: Fn(Message) -> Message + Send + Sync + 'static,
{
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let handler = Arc::new(handler);
    let flag = Arc::clone(&stop);
    let join = thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let handler = Arc::clone(&handler);
            thread::spawn(move || serve_connection(stream, &*handler));
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        join: Some(join),
    })
}

fn serve_connection(stream: TcpStream, handler: &dyn Fn(Message) -> Message) {
    let _ = stream.set_nodelay(true);
    let Ok(write_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    let mut writer = BufWriter::new(write_half);
    loop {
        let reply = match read_frame(&mut reader) {
            Ok(Some(msg)) => handler(msg),
            Ok(None) => break,
            Err(Error::Io(_)) => break,
            Err(e) => {
                // framing is lost after a bad frame; report and close
                let _ = write_frame(&mut writer, &Message::error(&e));
                break;
            }
        };
        if write_frame(&mut writer, &reply).is_err() {
            break;
        }
    }
    let _ = writer.get_ref().shutdown(Shutdown::Both);
}

fn sequence_from_update(u: UpdateSequence) -> Result<BehaviorSequence> {
    let mut seq = BehaviorSequence::empty(u.d);
    for (row, &cat) in u.items.chunks_exact(u.d.max(1)).zip(&u.categories) {
        let v = ItemVector::normalized(row.iter().map(|&x| f64::from(x)).collect())?;
        seq.push(&v, cat)?;
    }
    Ok(seq)
}

/// Serves `EncodeRequest` and `UpdateSequence` frames from `service`.
pub fn bse_serve(listener: TcpListener, service: Arc<BseService>) -> std::io::Result<ServerHandle> {
    spawn_server(listener, move |msg| {
        let result = match msg {
            Message::EncodeRequest { user_id } => service.encode(user_id).map(|b| Message::BucketTable(b.to_vec())),
            Message::UpdateSequence(u) => {
                let user_id = u.user_id;
                sequence_from_update(u)
                    .and_then(|seq| service.replace_sequence(user_id, seq))
                    .map(|sequence_version| Message::Ack {
                        user_id,
                        sequence_version,
                    })
            }
            other => Err(Error::invalid(format!("BSE server cannot handle {:?}", other.message_type()))),
        };
        result.unwrap_or_else(|e| Message::error(&e))
    })
}

/// Serves `ScoreRequest` frames, fetching tables through `service`'s source.
pub fn ctr_serve<S>(listener: TcpListener, service: Arc<CtrService<S>>) -> std::io::Result<ServerHandle>
where
    S: TableSource + 'static,
{
    spawn_server(listener, move |msg| {
        let result = match msg {
            Message::ScoreRequest(req) => score_request(&service, req),
            other => Err(Error::invalid(format!("CTR server cannot handle {:?}", other.message_type()))),
        };
        result.unwrap_or_else(|e| Message::error(&e))
    })
}

fn score_request<S: TableSource>(service: &CtrService<S>, req: ScoreRequest) -> Result<Message> {
    let d = service.family().dim();
    let mut flat = Vec::with_capacity(req.candidates.len() * d);
    for c in &req.candidates {
        if c.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: c.len(),
            });
        }
        flat.extend(c.iter().map(|&x| f64::from(x)));
    }
    let results = service
        .score(req.user_id, &flat)?
        .into_iter()
        .map(|g| ScoredCandidate {
            hit_rounds: g.hit_rounds as u16,
            interest: g.interest.iter().map(|&x| x as f32).collect(),
        })
        .collect();
    Ok(Message::ScoreResponse(ScoreResponse { results }))
}

/// A blocking request/response connection to either server.
#[derive(Debug)]
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: BufWriter::new(stream.try_clone()?),
            reader: BufReader::new(stream),
        })
    }

    pub fn call(&mut self, msg: &Message) -> Result<Message> {
        write_frame(&mut self.writer, msg)?;
        match read_frame(&mut self.reader)? {
            Some(Message::Error { code, message }) => Err(Error::Remote { code, message }),
            Some(reply) => Ok(reply),
            None => Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "server closed the connection",
            ))),
        }
    }

    pub fn fetch_table(&mut self, user_id: u64) -> Result<Vec<u8>> {
        match self.call(&Message::EncodeRequest { user_id }) {
            Ok(Message::BucketTable(bytes)) => Ok(bytes),
            Ok(other) => Err(unexpected(&other)),
            Err(Error::Remote { code: error_code::UNKNOWN_USER, .. }) => Err(Error::UnknownUser(user_id)),
            Err(e) => Err(e),
        }
    }

    pub fn update_sequence(&mut self, user_id: u64, seq: &BehaviorSequence) -> Result<u64> {
        let update = UpdateSequence {
            user_id,
            d: seq.dim(),
            categories: seq.categories().to_vec(),
            items: seq.flat().iter().map(|&x| x as f32).collect(),
        };
        match self.call(&Message::UpdateSequence(update))? {
            Message::Ack { sequence_version, .. } => Ok(sequence_version),
            other => Err(unexpected(&other)),
        }
    }

    pub fn score(&mut self, request: ScoreRequest) -> Result<ScoreResponse> {
        let user_id = request.user_id;
        match self.call(&Message::ScoreRequest(request)) {
            Ok(Message::ScoreResponse(resp)) => Ok(resp),
            Ok(other) => Err(unexpected(&other)),
            Err(Error::Remote { code: error_code::UNKNOWN_USER, .. }) => Err(Error::UnknownUser(user_id)),
            Err(e) => Err(e),
        }
    }
}

fn unexpected(msg: &Message) -> Error {
    Error::invalid(format!("unexpected reply {:?}", msg.message_type()))
}

/// A [`TableSource`] backed by a remote BSE server, with a pool of idle connections.
#[derive(Debug)]
pub struct RemoteBse {
    addr: SocketAddr,
    idle: Mutex<Vec<Client>>,
}

impl RemoteBse {
    pub fn new(addr: SocketAddr) -> Self {
        Self {
            addr,
            idle: Mutex::new(Vec::new()),
        }
    }
}

impl TableSource for RemoteBse {
    fn fetch_table(&self, user_id: u64) -> Result<Arc<Vec<u8>>> {
        let pooled = self.idle.lock().pop();
        let mut client = match pooled {
            Some(c) => c,
            None => Client::connect(self.addr)?,
        };
        let result = client.fetch_table(user_id);
        // a connection that failed at the transport level is not reused
        if !matches!(result, Err(Error::Io(_)) | Err(Error::Malformed { .. })) {
            self.idle.lock().push(client);
        }
        result.map(Arc::new)
    }
}
