mod common;

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use proptest::prelude::*;
use sdim_core::serving::{
    bse_serve, ctr_serve, deserialize_bucket_table, encode_sequence, encoded_len, gather_interest,
    serialize_bucket_table, Bucket, BseService, BucketTable, Client, CtrService, Precision, RemoteBse, ScoreRequest,
};
use sdim_core::simhash::signatures;
use sdim_core::vector::{linf, norm};
use sdim_core::{sample_hash_family, sdim_attention, BehaviorSequence, Error, Weights};

use common::{random_sequence, random_unit, rng, via_f32};

#[test]
fn empty_sequence_gives_empty_table() {
    let fam = sample_hash_family(1, 48, 3, 8).unwrap();
    let t = encode_sequence(&BehaviorSequence::empty(8), &fam, 5).unwrap();
    assert_eq!(t.round_count(), 16);
    assert_eq!(t.bucket_count(), 0);
    t.validate().unwrap();
    let g = gather_interest(&random_unit(&mut rng(1), 8), &t, &fam).unwrap();
    assert_eq!(g.hit_rounds, 0);
    assert!(g.interest.iter().all(|&x| x == 0.0));
}

#[test]
fn duplicate_items_share_one_bucket() {
    let s = random_unit(&mut rng(2), 6);
    let seq = BehaviorSequence::from_items(vec![s.clone(), s.clone()]).unwrap();
    let fam = sample_hash_family(3, 24, 4, 6).unwrap();
    let t = encode_sequence(&seq, &fam, 1).unwrap();
    for round in &t.rounds {
        assert_eq!(round.len(), 1);
        assert_eq!(round[0].count, 2);
        let v: Vec<f64> = round[0].vector.iter().map(|&x| f64::from(x)).collect();
        assert!(linf(&v, &s) < 1e-6);
    }
}

#[test]
fn bucket_membership_matches_independent_hashing() {
    let mut r = rng(3);
    let seq = random_sequence(&mut r, 1024, 32, 4);
    let fam = sample_hash_family(7, 48, 3, 32).unwrap();
    let t = encode_sequence(&seq, &fam, 9).unwrap();
    t.validate().unwrap();

    // recompute every item's signature through the two-step path
    let sigs: Vec<Vec<u16>> = seq
        .items()
        .map(|s| signatures(&fam.hash_codes(s).unwrap(), 3).unwrap().codes)
        .collect();
    for (i, round) in t.rounds.iter().enumerate() {
        assert_eq!(round.iter().map(|b| b.count as usize).sum::<usize>(), 1024);
        for b in round {
            let members: Vec<usize> = (0..1024).filter(|&j| sigs[j][i] == b.signature).collect();
            assert_eq!(members.len(), b.count as usize);
            let mut sum = vec![0.0; 32];
            for &j in &members {
                sum.iter_mut().zip(seq.item(j)).for_each(|(a, x)| *a += x);
            }
            let n = norm(&sum);
            let expect: Vec<f64> = sum.iter().map(|x| x / n).collect();
            let got: Vec<f64> = b.vector.iter().map(|&x| f64::from(x)).collect();
            assert!(linf(&expect, &got) < 1e-6);
        }
    }
}

#[test]
fn gather_equals_in_process_attention() {
    let mut r = rng(4);
    for case in 0..20 {
        let l = 1 + case * 13;
        let seq = random_sequence(&mut r, l, 16, 3);
        let fam = sample_hash_family(case as u64, 36, 3, 16).unwrap();
        let t = encode_sequence(&seq, &fam, 1).unwrap();
        for _ in 0..5 {
            let q = random_unit(&mut r, 16);
            let g = gather_interest(&q, &t, &fam).unwrap();
            let direct = sdim_attention(&q, &seq, &fam, Weights::Skip).unwrap();
            assert!(linf(&g.interest, &direct.interest) < 1e-6);
        }
    }
}

#[test]
fn member_of_sequence_hits_every_round() {
    let mut r = rng(5);
    let seq = random_sequence(&mut r, 50, 8, 1);
    let fam = sample_hash_family(5, 48, 3, 8).unwrap();
    let t = encode_sequence(&seq, &fam, 1).unwrap();
    let g = gather_interest(seq.item(17), &t, &fam).unwrap();
    assert_eq!(g.hit_rounds, 16);
}

#[test]
fn gather_rejects_foreign_family() {
    let seq = random_sequence(&mut rng(6), 4, 8, 1);
    let fam = sample_hash_family(5, 48, 3, 8).unwrap();
    let t = encode_sequence(&seq, &fam, 1).unwrap();
    let other = sample_hash_family(6, 48, 3, 8).unwrap();
    assert!(matches!(gather_interest(seq.item(0), &t, &other), Err(Error::FamilyMismatch(_))));
    let wrong_dim_seq = random_sequence(&mut rng(6), 4, 5, 1);
    assert!(matches!(encode_sequence(&wrong_dim_seq, &fam, 1), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn transmission_size_is_predictable() {
    let mut r = rng(7);
    for l in [0, 1, 5, 300] {
        let seq = if l == 0 { BehaviorSequence::empty(16) } else { random_sequence(&mut r, l, 16, 1) };
        let fam = sample_hash_family(8, 48, 3, 16).unwrap();
        let t = encode_sequence(&seq, &fam, 1).unwrap();
        let bytes = serialize_bucket_table(&t).unwrap();
        let formula = 40 + t.rounds.iter().map(|b| 2 + b.len() * (2 + 4 + 4 * 16)).sum::<usize>();
        assert_eq!(bytes.len(), formula);
        assert_eq!(bytes.len(), encoded_len(&t, Precision::F32));
    }
}

fn arb_table() -> impl Strategy<Value = BucketTable> {
    (1usize..=4, 1usize..=6, 1usize..=4, any::<u64>(), any::<u64>(), any::<u64>()).prop_flat_map(
        |(tau, rounds, d, user_id, family_seed, version)| {
            let round = prop::collection::btree_map(0u16..(1u16 << tau), (1u32..50, prop::collection::vec(-1.0f32..1.0, d)), 0..=(1usize << tau));
            prop::collection::vec(round, rounds).prop_map(move |rs| {
                // give every round the same total, padding with one extra bucket where needed
                let target: u32 = rs.iter().map(|r| r.values().map(|v| v.0).sum::<u32>()).max().unwrap_or(0);
                let rounds: Vec<Vec<Bucket>> = rs
                    .into_iter()
                    .map(|r| {
                        let mut buckets: Vec<Bucket> = r
                            .into_iter()
                            .map(|(signature, (count, vector))| Bucket { signature, count, vector })
                            .collect();
                        let have: u32 = buckets.iter().map(|b| b.count).sum();
                        if have < target {
                            match buckets.last_mut() {
                                Some(b) => b.count += target - have,
                                None => buckets.push(Bucket { signature: 0, count: target, vector: vec![0.5; d] }),
                            }
                        }
                        buckets
                    })
                    .collect();
                BucketTable {
                    d,
                    m: tau * rounds.len(),
                    tau,
                    user_id,
                    family_seed,
                    sequence_version: version,
                    item_count: target,
                    rounds,
                }
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn wire_round_trip_is_identity(t in arb_table()) {
        let bytes = serialize_bucket_table(&t).unwrap();
        prop_assert_eq!(bytes.len(), encoded_len(&t, Precision::F32));
        let back = deserialize_bucket_table(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(serialize_bucket_table(&back).unwrap(), bytes);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = deserialize_bucket_table(&bytes);
        let mut framed = b"SDIM\x01\x00".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = deserialize_bucket_table(&framed);
    }
}

#[test]
fn bse_cache_hits_until_sequence_changes() {
    let fam = sample_hash_family(1, 48, 3, 8).unwrap();
    let bse = BseService::new(fam);
    let mut r = rng(8);
    bse.replace_sequence(3, random_sequence(&mut r, 30, 8, 1)).unwrap();
    let a = bse.encode(3).unwrap();
    let b = bse.encode(3).unwrap();
    assert_eq!(a, b);
    assert_eq!(bse.metrics().cache_hits, 1);
    assert_eq!(bse.metrics().sequence_hash_passes, 1);

    assert_eq!(bse.replace_sequence(3, random_sequence(&mut r, 30, 8, 1)).unwrap(), 2);
    let c = bse.encode(3).unwrap();
    assert_ne!(a, c);
    assert_eq!(deserialize_bucket_table(&c).unwrap().sequence_version, 2);
    assert_eq!(bse.metrics().sequence_hash_passes, 2);
    assert!(matches!(bse.encode(99), Err(Error::UnknownUser(99))));
    assert!(matches!(
        bse.replace_sequence(4, BehaviorSequence::empty(3)),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn in_process_scoring_hashes_sequence_once_per_request() {
    let fam = sample_hash_family(2, 48, 3, 128).unwrap();
    let bse = Arc::new(BseService::new(fam.clone()));
    let mut r = rng(9);
    bse.replace_sequence(1, random_sequence(&mut r, 1024, 128, 1)).unwrap();
    let ctr = CtrService::new(fam, Arc::clone(&bse));
    let cands: Vec<f64> = (0..1024).flat_map(|_| random_unit(&mut r, 128).into_inner()).collect();
    let before = bse.metrics().sequence_hash_passes;
    let out = ctr.score(1, &cands).unwrap();
    assert_eq!(out.len(), 1024);
    assert_eq!(bse.metrics().sequence_hash_passes - before, 1);
    assert_eq!(ctr.metrics().candidate_hash_passes, 1);
    assert_eq!(ctr.metrics().table_fetches, 1);
}

#[test]
fn tcp_end_to_end() {
    let fam = sample_hash_family(11, 48, 3, 16).unwrap();
    let bse = Arc::new(BseService::new(fam.clone()));
    let bse_srv = bse_serve(TcpListener::bind("127.0.0.1:0").unwrap(), Arc::clone(&bse)).unwrap();
    let ctr = Arc::new(CtrService::new(fam.clone(), RemoteBse::new(bse_srv.local_addr())));
    let ctr_srv = ctr_serve(TcpListener::bind("127.0.0.1:0").unwrap(), Arc::clone(&ctr)).unwrap();

    let mut r = rng(10);
    let seq = random_sequence(&mut r, 200, 16, 2);
    let mut bse_client = Client::connect(bse_srv.local_addr()).unwrap();
    assert_eq!(bse_client.update_sequence(7, &seq).unwrap(), 1);
    bse.replace_sequence(8, BehaviorSequence::empty(16)).unwrap();

    let mut client = Client::connect(ctr_srv.local_addr()).unwrap();

    // empty history → zero interest
    let q = random_unit(&mut r, 16);
    let resp = client
        .score(ScoreRequest { user_id: 8, candidates: vec![q.iter().map(|&x| x as f32).collect()] })
        .unwrap();
    assert_eq!(resp.results.len(), 1);
    assert_eq!(resp.results[0].hit_rounds, 0);
    assert!(resp.results[0].interest.iter().all(|&x| x == 0.0));

    // served interests match in-process attention on the stored sequence
    let (_, stored) = bse.sequence(7).unwrap();
    let cands: Vec<Vec<f64>> = (0..32).map(|_| via_f32(&random_unit(&mut r, 16))).collect();
    let resp = client
        .score(ScoreRequest {
            user_id: 7,
            candidates: cands.iter().map(|c| c.iter().map(|&x| x as f32).collect()).collect(),
        })
        .unwrap();
    for (c, got) in cands.iter().zip(&resp.results) {
        let want = sdim_attention(c, &stored, &fam, Weights::Skip).unwrap();
        let got: Vec<f64> = got.interest.iter().map(|&x| f64::from(x)).collect();
        assert!(linf(&got, &want.interest) < 1e-6);
    }

    // a second request for the same user is a cache hit
    let hits = bse.metrics().cache_hits;
    client.score(ScoreRequest { user_id: 7, candidates: vec![] }).unwrap();
    assert_eq!(bse.metrics().cache_hits, hits + 1);

    assert!(matches!(
        client.score(ScoreRequest { user_id: 404, candidates: vec![] }),
        Err(Error::UnknownUser(404))
    ));
    assert!(matches!(
        client.score(ScoreRequest { user_id: 7, candidates: vec![vec![1.0, 0.0]] }),
        Err(Error::Remote { .. })
    ));
    // the connection stays usable after an error reply
    client.score(ScoreRequest { user_id: 7, candidates: vec![] }).unwrap();

    ctr_srv.shutdown();
    bse_srv.shutdown();
}

#[test]
fn ctr_reports_transport_failure_as_error() {
    let fam = sample_hash_family(11, 12, 3, 4).unwrap();
    // nothing listens on this address once the listener is dropped
    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let ctr = CtrService::new(fam, RemoteBse::new(addr));
    assert!(matches!(ctr.score(1, &[1.0, 0.0, 0.0, 0.0]), Err(Error::Io(_))));
}

#[test]
fn concurrent_replacement_is_atomic_per_user() {
    let fam = sample_hash_family(12, 24, 3, 8).unwrap();
    let bse = Arc::new(BseService::new(fam.clone()));
    let mut r = rng(11);
    let versions: Vec<BehaviorSequence> = (0..4).map(|_| random_sequence(&mut r, 40, 8, 1)).collect();
    let tables: Vec<Vec<u8>> = versions
        .iter()
        .enumerate()
        .map(|(v, s)| serialize_bucket_table(&encode_sequence(s, &fam, 1).unwrap().with_version(v as u64 + 1)).unwrap())
        .collect();
    bse.replace_sequence(1, versions[0].clone()).unwrap();

    thread::scope(|scope| {
        let writer_bse = Arc::clone(&bse);
        let seqs = &versions;
        scope.spawn(move || {
            for s in &seqs[1..] {
                writer_bse.replace_sequence(1, s.clone()).unwrap();
            }
        });
        for _ in 0..4 {
            let reader = Arc::clone(&bse);
            let tables = &tables;
            scope.spawn(move || {
                for _ in 0..50 {
                    let bytes = reader.encode(1).unwrap();
                    assert!(tables.iter().any(|t| t.as_slice() == bytes.as_slice()));
                }
            });
        }
    });
}
