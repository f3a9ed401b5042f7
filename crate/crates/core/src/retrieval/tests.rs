use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::geometry::Predicate;
use crate::graph::ClassVocabulary;

/// Random records; with `coarse`, vector entries come from {-1, 0, 1} so ties are common.
fn random_db(seed: u64, n: usize, d: usize, classes: usize, coarse: bool) -> EmbeddingDatabase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d)
            .map(|_| if coarse { rng.random_range(-1i32..=1) as f64 } else { rng.random_range(-1.0..1.0) })
            .collect()
    };
    let records = (0..n)
        .map(|i| EmbeddingRecord {
            record_id: i as u64,
            image_id: (i / 3) as u64,
            subject_class: rng.random_range(0..classes),
            predicate: Predicate::ALL[rng.random_range(0..6)],
            object_class: rng.random_range(0..classes),
            subject_vec: v(&mut rng),
            predicate_vec: v(&mut rng),
            object_vec: v(&mut rng),
        })
        .collect();
    EmbeddingDatabase::new(d, 7, records).unwrap()
}

fn parts(r: &EmbeddingRecord, mode: QueryMode) -> Vec<f64> {
    let mut out = Vec::new();
    for c in mode.components() {
        out.extend_from_slice(match c {
            Component::Subject => &r.subject_vec,
            Component::Predicate => &r.predicate_vec,
            Component::Object => &r.object_vec,
        });
    }
    out
}

/// Exhaustive sort of every candidate by (distance, record id).
fn oracle(db: &EmbeddingDatabase, q: &QueryVector) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = db
        .records()
        .iter()
        .filter(|r| Some(r.record_id) != q.source_record)
        .map(|r| {
            let p = parts(r, q.mode);
            let d2: f64 = q.vector.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
            (r.record_id, d2.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

#[test]
fn similarity_is_inverse_distance() {
    assert_eq!(similarity(0.5), 2.0);
    assert_eq!(similarity(0.0), MAX_SIMILARITY);
    assert_eq!(similarity(1e-10), MAX_SIMILARITY);
    assert_eq!(similarity(4.0), 0.25);
}

#[test]
fn query_lengths_follow_the_mode() {
    let db = random_db(1, 5, 128, 3, false);
    let r = &db.records()[2];
    assert_eq!(QueryVector::from_record(r, QueryMode::SPO).vector.len(), 384);
    assert_eq!(QueryVector::from_record(r, QueryMode::P).vector.len(), 128);
    let so = QueryVector::from_record(r, QueryMode::SO);
    assert_eq!(&so.vector[..128], r.subject_vec.as_slice());
    assert_eq!(&so.vector[128..], r.object_vec.as_slice());
}

#[test]
fn mode_names_round_trip() {
    for m in QueryMode::ALL {
        assert_eq!(m.wire_name().parse::<QueryMode>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.wire_name()));
    }
    assert_eq!("SO".parse::<QueryMode>().unwrap(), QueryMode::SO);
    assert_eq!("s + p + o".parse::<QueryMode>().unwrap(), QueryMode::SPO);
    assert!("p+o".parse::<QueryMode>().is_err());
}

#[test]
fn copy_of_a_record_ranks_first_at_zero() {
    let db = random_db(2, 50, 8, 4, false);
    let mut q = QueryVector::from_record(&db.records()[17], QueryMode::SPO);
    q.source_record = None;
    let top = rank(&db, &q, 3).unwrap();
    assert_eq!(top[0].record_id, 17);
    assert_eq!(top[0].distance, 0.0);
    assert_eq!(top[0].similarity, MAX_SIMILARITY);
    assert_eq!(top.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn rank_errors() {
    let empty = EmbeddingDatabase::new(4, 0, vec![]).unwrap();
    let db = random_db(3, 5, 4, 2, false);
    let q = QueryVector::from_record(&db.records()[0], QueryMode::S);
    assert!(matches!(rank(&empty, &q, 1), Err(Error::EmptyDatabase)));
    assert!(matches!(rank(&db, &q, 0), Err(Error::InvalidQuery(_))));
    let mut bad = q.clone();
    bad.vector.pop();
    assert!(matches!(rank(&db, &bad, 1), Err(Error::ShapeMismatch(_))));
    // asking for more than exists returns everything else
    assert_eq!(rank(&db, &q, 100).unwrap().len(), 4);
}

#[test]
fn ranking_matches_exhaustive_oracle_with_ties() {
    for seed in 0..5 {
        let db = random_db(seed, 100, 3, 4, true);
        for mode in QueryMode::ALL {
            for i in [0, 31, 99] {
                let q = QueryVector::from_record(&db.records()[i], mode);
                let got: Vec<_> = rank(&db, &q, 99).unwrap().iter().map(|r| (r.record_id, r.distance)).collect();
                assert_eq!(got, oracle(&db, &q), "seed {seed} mode {mode} query {i}");
                let got10: Vec<_> = rank(&db, &q, 10).unwrap().iter().map(|r| (r.record_id, r.distance)).collect();
                assert_eq!(got10, oracle(&db, &q)[..10]);
            }
        }
    }
}

#[test]
fn relevance_needs_the_full_triplet() {
    let db = random_db(4, 3, 2, 2, false);
    let mut a = db.records()[0].clone();
    let mut b = a.clone();
    (a.subject_class, a.predicate, a.object_class) = (0, Predicate::LeftOf, 1);
    (b.subject_class, b.predicate, b.object_class) = (0, Predicate::LeftOf, 1);
    for mode in QueryMode::ALL {
        let q = QueryVector::from_record(&a, mode);
        assert!(is_relevant(&q, &b));
        b.predicate = Predicate::RightOf;
        // s+o queries still judge the predicate
        assert!(!is_relevant(&q, &b));
        b.predicate = Predicate::LeftOf;
    }
}

#[test]
fn duplicates_give_perfect_recall_at_one() {
    let base = random_db(5, 30, 4, 50, false);
    let mut records = Vec::new();
    for r in base.records() {
        for _ in 0..2 {
            records.push(EmbeddingRecord { record_id: records.len() as u64, ..r.clone() });
        }
    }
    let db = EmbeddingDatabase::new(4, 0, records).unwrap();
    for mode in QueryMode::ALL {
        let qs = leave_one_out_queries(&db, mode);
        assert_eq!(qs.len(), 60);
        let rep = recall_at_k(&db, &qs, &[1]).unwrap();
        assert_eq!(rep.per_query, vec![1.0]);
    }
}

#[test]
fn recall_rejects_empty_inputs() {
    let db = random_db(6, 10, 4, 2, false);
    assert!(matches!(recall_at_k(&db, &[], &[1]), Err(Error::EmptyQuerySet)));
    let qs = leave_one_out_queries(&db, QueryMode::S);
    assert!(matches!(recall_at_k(&db, &qs, &[]), Err(Error::InvalidQuery(_))));
    assert!(matches!(recall_at_k(&db, &qs, &[0, 1]), Err(Error::InvalidQuery(_))));
}

#[test]
fn singleton_triplets_are_not_queries() {
    let db = random_db(7, 40, 2, 30, false);
    let qs = leave_one_out_queries(&db, QueryMode::SO);
    for q in &qs {
        let others = db.records().iter().filter(|r| Some(r.record_id) != q.source_record && is_relevant(q, r)).count();
        assert!(others >= 1);
    }
    let kept: std::collections::HashSet<_> = qs.iter().map(|q| q.source_record.unwrap()).collect();
    for r in db.records() {
        if !kept.contains(&r.record_id) {
            let q = QueryVector::from_record(r, QueryMode::SO);
            assert!(!db.records().iter().any(|o| o.record_id != r.record_id && is_relevant(&q, o)));
        }
    }
}

#[test]
fn random_vectors_match_the_k_over_n_expectation() {
    // pairs of identical labels: each query has exactly one relevant record among n - 1
    let pairs = 100;
    let n = 2 * pairs;
    let ks = [1, 5, 10, 50];
    let trials = 40;
    let mut mean = [0.0; 4];
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
        let records = (0..n)
            .map(|i| EmbeddingRecord {
                record_id: i as u64,
                image_id: 0,
                subject_class: i / 2,
                predicate: Predicate::Above,
                object_class: 0,
                subject_vec: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                predicate_vec: vec![0.0; 4],
                object_vec: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let db = EmbeddingDatabase::new(4, 0, records).unwrap();
        let qs = leave_one_out_queries(&db, QueryMode::SO);
        let rep = recall_at_k(&db, &qs, &ks).unwrap();
        for (m, r) in mean.iter_mut().zip(&rep.per_query) {
            *m += r / trials as f64;
        }
    }
    for (j, &k) in ks.iter().enumerate() {
        let p = k as f64 / (n - 1) as f64;
        // per-trial queries are correlated in pairs, so use n/2 independent draws per trial
        let se = (p * (1.0 - p) / (trials as f64 * pairs as f64)).sqrt();
        assert!((mean[j] - p).abs() < 4.0 * se, "k={k}: {} vs {p} (se {se})", mean[j]);
    }
}

fn vocab(names: &[&str], freqs: &[u64]) -> ClassVocabulary {
    ClassVocabulary::with_frequencies(names.iter().map(|s| s.to_string()).collect(), freqs.to_vec()).unwrap()
}

#[test]
fn uniform_frequencies_break_ties_by_name() {
    let names = ["j", "i", "h", "g", "f", "e", "d", "c", "b", "a"];
    let split = partition_classes(&vocab(&names, &[5; 10]), HEAD_FRACTION);
    assert_eq!(split.head, [9, 8].into_iter().collect());
    assert_eq!(split.tail.len(), 8);
}

#[test]
fn most_frequent_class_is_head_and_rarer_class_decides() {
    let v = vocab(&["a", "b", "c", "d", "e", "f", "g"], &[1, 90, 40, 3, 2, 2, 1]);
    let split = partition_classes(&v, HEAD_FRACTION);
    assert_eq!(split.head, [1, 2].into_iter().collect());
    let labels = |s, o| QueryLabels { subject: Some(s), predicate: Some(Predicate::Above), object: Some(o) };
    assert_eq!(split.bucket(&labels(1, 2)), Bucket::Head);
    assert_eq!(split.bucket(&labels(1, 3)), Bucket::Tail);
    assert_eq!(split.bucket(&labels(6, 2)), Bucket::Tail);
}

#[test]
fn split_recall_recomposes_from_filtered_queries() {
    let db = random_db(8, 300, 4, 6, false);
    let v = vocab(&["a", "b", "c", "d", "e", "f"], &[60, 50, 40, 30, 20, 10]);
    let split = partition_classes(&v, 0.5);
    let ks = [1, 5, 20];
    for mode in QueryMode::ALL {
        let qs = leave_one_out_queries(&db, mode);
        let by = recall_by_split(&db, &qs, &ks, &split).unwrap();
        let head: Vec<_> = qs.iter().filter(|q| split.bucket(&q.labels) == Bucket::Head).cloned().collect();
        let tail: Vec<_> = qs.iter().filter(|q| split.bucket(&q.labels) == Bucket::Tail).cloned().collect();
        assert_eq!(by.head.unwrap(), recall_at_k(&db, &head, &ks).unwrap());
        assert_eq!(by.tail.unwrap(), recall_at_k(&db, &tail, &ks).unwrap());
    }
}

#[test]
fn empty_bucket_is_absent() {
    let db = random_db(9, 60, 4, 2, false);
    let v = vocab(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"], &[9, 8, 1, 1, 1, 1, 1, 1, 1, 1]);
    let split = partition_classes(&v, HEAD_FRACTION);
    let qs = leave_one_out_queries(&db, QueryMode::S);
    let by = recall_by_split(&db, &qs, &[1], &split).unwrap();
    assert!(by.head.is_some());
    assert_eq!(by.tail, None);
}

#[test]
fn per_class_recall_averages_relationship_classes() {
    let db = random_db(10, 200, 4, 2, false);
    let qs = leave_one_out_queries(&db, QueryMode::SPO);
    let hits = query_hits(&db, &qs, &[3]).unwrap();
    let mut groups: std::collections::BTreeMap<_, (usize, usize)> = Default::default();
    for (q, h) in qs.iter().zip(&hits) {
        let e = groups.entry((q.labels.subject, q.labels.predicate, q.labels.object)).or_default();
        e.0 += h[0] as usize;
        e.1 += 1;
    }
    let want = groups.values().map(|(h, n)| *h as f64 / *n as f64).sum::<f64>() / groups.len() as f64;
    let rep = recall_at_k(&db, &qs, &[3]).unwrap();
    assert!((rep.per_class[0] - want).abs() < 1e-15);
}

#[test]
fn prototypes_are_centroids_over_both_roles() {
    let db = random_db(11, 40, 3, 3, false);
    let protos = Prototypes::new(&db);
    let mut sum = vec![0.0; 3];
    let mut n = 0;
    for r in db.records() {
        for (c, v) in [(r.subject_class, &r.subject_vec), (r.object_class, &r.object_vec)] {
            if c == 1 {
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                n += 1;
            }
        }
    }
    for (a, b) in protos.class(1).unwrap().iter().zip(&sum) {
        assert!((a - b / n as f64).abs() < 1e-12);
    }

    let q = LabelQuery { subject: Some(1), predicate: None, object: Some(2), mode: QueryMode::SO };
    let qv = protos.query(&q).unwrap();
    assert_eq!(&qv.vector[..3], protos.class(1).unwrap());
    assert_eq!(qv.source_record, None);

    let wrong_mode = LabelQuery { mode: QueryMode::SPO, ..q };
    assert!(matches!(protos.query(&wrong_mode), Err(Error::InvalidQuery(_))));
    let unknown = LabelQuery { subject: Some(17), ..q };
    assert!(matches!(protos.query(&unknown), Err(Error::UnknownLabel(_))));
}

#[test]
fn database_file_round_trips() {
    let db = random_db(12, 25, 5, 4, false);
    let mut buf = Vec::new();
    write_database(&mut buf, &db).unwrap();
    assert_eq!(&buf[..4], DATABASE_MAGIC);
    assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 8 + 25 * (8 + 8 + 4 + 1 + 4 + 3 * 5 * 8));
    assert_eq!(read_database(buf.as_slice()).unwrap(), db);

    assert!(matches!(read_database(&buf[..buf.len() - 3]), Err(Error::Format(_))));
    let mut extra = buf.clone();
    extra.push(0);
    assert!(matches!(read_database(extra.as_slice()), Err(Error::Format(_))));
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_database(bad.as_slice()), Err(Error::Format(_))));
}

#[test]
fn database_rejects_bad_records() {
    let db = random_db(13, 3, 2, 2, false);
    let mut rs = db.records().to_vec();
    rs[1].record_id = 0;
    assert!(EmbeddingDatabase::new(2, 0, rs).is_err());
    let mut rs = db.records().to_vec();
    rs[2].object_vec.push(1.0);
    assert!(matches!(EmbeddingDatabase::new(2, 0, rs), Err(Error::ShapeMismatch(_))));
    let mut rs = db.records().to_vec();
    rs[0].predicate_vec[0] = f64::NAN;
    assert!(matches!(EmbeddingDatabase::new(2, 0, rs), Err(Error::NonFinite(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn self_is_never_returned(seed in 0u64..1000, i in 0usize..60, m in 0usize..5) {
        let db = random_db(seed, 60, 3, 3, true);
        let q = QueryVector::from_record(&db.records()[i], QueryMode::ALL[m]);
        let out = rank(&db, &q, 59).unwrap();
        prop_assert_eq!(out.len(), 59);
        prop_assert!(out.iter().all(|r| r.record_id != i as u64));
    }

    #[test]
    fn so_distances_are_spo_distances_without_the_predicate(seed in 0u64..1000, i in 0usize..40) {
        let db = random_db(seed, 40, 4, 3, false);
        let so = QueryVector::from_record(&db.records()[i], QueryMode::SO);
        let spo = QueryVector::from_record(&db.records()[i], QueryMode::SPO);
        for r in rank(&db, &so, 39).unwrap() {
            let rec = db.get(r.record_id).unwrap();
            let full = parts(rec, QueryMode::SPO);
            let d2: f64 = (0..4).chain(8..12).map(|j| (spo.vector[j] - full[j]).powi(2)).sum();
            prop_assert!((r.distance - d2.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_is_monotone_in_k(seed in 0u64..1000, m in 0usize..5) {
        let db = random_db(seed, 120, 3, 3, false);
        let qs = leave_one_out_queries(&db, QueryMode::ALL[m]);
        let ks = [1, 2, 5, 10, 25, 50, 100];
        let rep = recall_at_k(&db, &qs, &ks).unwrap();
        prop_assert!(rep.per_query.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(rep.per_class.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ranks_ignore_the_similarity_transform(seed in 0u64..1000) {
        let db = random_db(seed, 50, 3, 3, false);
        let q = QueryVector::from_record(&db.records()[0], QueryMode::SPO);
        let out = rank(&db, &q, 49).unwrap();
        prop_assert!(out.windows(2).all(|w| w[0].distance <= w[1].distance && w[0].similarity >= w[1].similarity));
    }
}
