use sgir_core::geometry::BoundingBox;
use sgir_core::graph::{build_corpus, GraphBuildConfig, Triplet};
use sgir_core::model::{encode_graph, ModelConfig};
use sgir_core::retrieval::{build_database, read_database, write_database, QueryMode, QueryVector};
use sgir_core::synth::{generate_synthetic_corpus, VocabSpec};
use sgir_core::trainer::Checkpoint;
use sgir_core::{Error, ParamStore, Predicate, SceneGraph};

fn small_model(classes: usize) -> ModelConfig {
    ModelConfig {
        d_embed: 8,
        d_hidden: 16,
        n_rounds: 2,
        gcn_hidden: vec![16],
        num_classes: classes,
        object_mask_size: 4,
        triplet_mask_size: 8,
        triplet_mask_coarse: 4,
        ..ModelConfig::default()
    }
}

fn checkpoint(classes: usize) -> Checkpoint {
    let model = small_model(classes);
    let mut store: ParamStore = ParamStore::new(3);
    model.init_params(&mut store).unwrap();
    Checkpoint::new(model, store).unwrap()
}

fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

#[test]
fn one_record_per_triplet_with_encoder_vectors() {
    let spec = VocabSpec { n_classes: 10, ..VocabSpec::default() };
    let graphs = build_corpus(&generate_synthetic_corpus(2, 10, &spec), &GraphBuildConfig::default()).unwrap();
    let ckpt = checkpoint(10);
    let db = build_database(&ckpt, &graphs, 99).unwrap();
    let total: usize = graphs.iter().map(|g| g.triplets().len()).sum();
    assert_eq!(db.len(), total);
    assert_eq!(db.vocab_hash(), 99);

    let mut id = 0;
    for (gi, g) in graphs.iter().enumerate() {
        let emb = encode_graph(g, &ckpt.store, &ckpt.model).unwrap();
        for (ti, t) in g.triplets().iter().enumerate() {
            let r = db.get(id).unwrap();
            assert_eq!(r.image_id, gi as u64);
            assert_eq!(r.labels(), (g.objects()[t.subject].class_id, t.predicate, g.objects()[t.object].class_id));
            assert_eq!(r.subject_vec, emb.object_vecs.row(t.subject));
            assert_eq!(r.predicate_vec, emb.predicate_vecs.row(ti));
            assert_eq!(r.object_vec, emb.object_vecs.row(t.object));
            id += 1;
        }
    }
}

#[test]
fn counts_ten_graphs_of_eight_triplets() {
    let objects: Vec<_> = (0..5).map(|i| (i % 3, bb(0.15 * i as f64, 0.1, 0.15 * i as f64 + 0.1, 0.3))).collect();
    let mut triplets = Vec::new();
    for s in 0..5 {
        for o in s + 1..5 {
            if triplets.len() < 8 {
                triplets.push(Triplet { subject: s, predicate: Predicate::LeftOf, object: o });
            }
        }
    }
    let graphs: Vec<_> =
        (0..10).map(|i| SceneGraph::new(format!("{}", 1000 + i), objects.clone(), triplets.clone()).unwrap()).collect();
    let db = build_database(&checkpoint(3), &graphs, 0).unwrap();
    assert_eq!(db.len(), 80);
    assert_eq!(db.records()[79].image_id, 1009);

    let mut buf = Vec::new();
    write_database(&mut buf, &db).unwrap();
    assert_eq!(read_database(buf.as_slice()).unwrap(), db);
    let q = QueryVector::from_record(&db.records()[0], QueryMode::SPO);
    assert_eq!(q.vector.len(), 24);
}

#[test]
fn class_outside_the_model_is_incompatible() {
    let spec = VocabSpec { n_classes: 30, ..VocabSpec::default() };
    let graphs = build_corpus(&generate_synthetic_corpus(2, 20, &spec), &GraphBuildConfig::default()).unwrap();
    assert!(matches!(build_database(&checkpoint(2), &graphs, 0), Err(Error::IncompatibleCheckpoint(_))));
}
