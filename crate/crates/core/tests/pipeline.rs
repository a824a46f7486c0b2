mod common;

use std::fs;
use std::path::Path;

use common::{checkpoint_bytes, fixture, small_config, train};
use emotopic::corpus::io::{write_corpus, write_table};
use emotopic::corpus::{Direction, Vocab};
use emotopic::metrics::{EmbeddingTable, TableSource};
use emotopic::pipeline::{
    chat, embedding_table, evaluate, load_split, prepare, run_train, run_train_lda, Config, Model, Split,
};
use emotopic::Error;

fn write_fixture(dir: &Path, pairs: usize) -> Config {
    let fx = fixture(4, pairs, 100);
    write_corpus(fs::File::create(dir.join("corpus.tsv")).unwrap(), &fx.corpus.pairs).unwrap();
    write_table(fs::File::create(dir.join("emotion.tsv")).unwrap(), &fx.corpus.emotion_source).unwrap();
    write_table(fs::File::create(dir.join("topic.tsv")).unwrap(), &fx.corpus.topic_source).unwrap();
    let mut cfg = small_config(12, 3);
    cfg.corpus = Some(dir.join("corpus.tsv"));
    cfg.emotion_dictionary = Some(dir.join("emotion.tsv"));
    cfg.topic_dictionary = Some(dir.join("topic.tsv"));
    cfg.work_dir = dir.join("run");
    cfg.val_size = 5;
    cfg.test_size = 5;
    cfg
}

#[test]
fn file_workflow_produces_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture(dir.path(), 60);
    let prep = prepare(&cfg).unwrap();
    assert_eq!((prep.train, prep.val, prep.test), (50, 5, 5));
    assert_eq!(prep.stats.retained, 60);

    let test = load_split(&cfg, Split::Test).unwrap();
    let train = load_split(&cfg, Split::Train).unwrap();
    assert_eq!((train.len(), test.len()), (50, 5));
    assert!(test.iter().all(|t| !train.contains(t)));

    let lda = run_train_lda(&cfg).unwrap();
    assert_eq!(lda.topics, cfg.lda.topics);
    assert!(cfg.lda_path().exists() && cfg.extracted_topics_path().exists());

    let report = run_train(&cfg).unwrap();
    assert_eq!(report.train_pairs, 50);
    assert_eq!(report.log.generator.len(), cfg.epochs + 1);
    assert_eq!(report.log.classifier.len(), cfg.classifier_epochs + 1);
    assert_eq!(report.log.selector.len(), cfg.selector_epochs + 1);
    assert_eq!(report.log.generator[0].epoch, 0);
    assert!(report.log.generator.iter().all(|e| e.keyword_loss.is_some()));
    assert!(cfg.train_log_path().exists());

    let model = Model::load(fs::File::open(cfg.checkpoint_path()).unwrap()).unwrap();
    assert_eq!(model.vocab.len(), report.vocabulary);
    let table = embedding_table(&cfg, &model).unwrap();
    assert_eq!(table.source(), TableSource::ModelEmbeddings);
    let scores = evaluate(&model, &test, &table, false).unwrap();
    assert_eq!(scores.evaluated + scores.skipped, test.len());
}

#[test]
fn echo_evaluation_scores_one() {
    let fx = fixture(8, 30, 100);
    let (model, _) = train(&small_config(8, 0), &fx);
    let mut table = EmbeddingTable::new(3, TableSource::ExternalFile);
    for (i, w) in model.vocab.tokens().iter().enumerate().skip(4) {
        table.insert(w.clone(), vec![1.0 + i as f64, (i as f64).sin(), -0.5]).unwrap();
    }
    let r = evaluate(&model, &fx.marked, &table, true).unwrap();
    assert_eq!(r.evaluated, fx.marked.len());
    for m in [r.greedy_matching, r.embedding_average, r.vector_extrema] {
        assert!((m.unwrap() - 1.0).abs() < 1e-12);
    }
    assert!(r.distinct_1.unwrap() > 0.0 && r.distinct_2.unwrap() <= 1.0);
}

#[test]
fn training_examples_reassemble_the_reply() {
    let fx = fixture(9, 40, 100);
    let (model, _) = train(&small_config(8, 0), &fx);
    for m in &fx.marked {
        let ex = model.example(m);
        let (fwd, bwd) = ex.arrangements();
        let want = model.vocab.encode(&m.pair.reply);
        match ex.direction {
            Direction::Forward => assert_eq!(fwd, want),
            Direction::Backward => assert_eq!(bwd, want),
        }
        assert!(!ex.post.iter().any(|&id| Vocab::is_reserved(id)));
    }
}

#[test]
fn chat_answers_each_nonempty_line() {
    let fx = fixture(10, 30, 100);
    let (model, _) = train(&small_config(8, 0), &fx);
    let input = format!("{}\n\n   \n{}\n", fx.marked[0].pair.post.join(" "), "unknown words only");
    let mut out = Vec::new();
    let mut prompt = Vec::new();
    let n = chat(&model, input.as_bytes(), &mut out, &mut prompt, false).unwrap();
    assert_eq!(n, 2);
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 2);
    assert_eq!(String::from_utf8(prompt).unwrap().matches("> ").count(), 5);

    let mut out = Vec::new();
    chat(&model, "hello there\n".as_bytes(), &mut out, std::io::sink(), true).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let trace: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert!(lines[0].split(' ').any(|w| w == trace["emotion_keyword"]));
}

#[test]
fn checkpoint_round_trip_preserves_generation() {
    let fx = fixture(11, 30, 100);
    let (model, _) = train(&small_config(8, 2), &fx);
    let bytes = checkpoint_bytes(&model);
    let loaded = Model::load(bytes.as_slice()).unwrap();
    for m in &fx.marked {
        assert_eq!(model.generate(&m.pair.post).unwrap(), loaded.generate(&m.pair.post).unwrap());
    }
    assert_eq!(loaded.selector_params.step_count(), model.selector_params.step_count());
}

#[test]
fn corrupt_checkpoints_and_bad_inputs_are_rejected() {
    let fx = fixture(12, 20, 100);
    let (model, _) = train(&small_config(8, 0), &fx);
    let bytes = checkpoint_bytes(&model);
    assert!(Model::load(&bytes[..bytes.len() / 2]).is_err());
    assert!(Model::load(&b"not a checkpoint"[..]).is_err());
    let empty: Vec<String> = Vec::new();
    assert!(model.generate(&empty).is_err());

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = write_fixture(dir.path(), 20);
    cfg.test_size = 100;
    assert!(matches!(prepare(&cfg), Err(Error::Data(_))));
    cfg.corpus = Some(dir.path().join("missing.tsv"));
    assert!(matches!(prepare(&cfg), Err(Error::Config(_))));
}

#[test]
fn training_is_seed_dependent() {
    let fx = fixture(14, 20, 100);
    let mut cfg = small_config(8, 1);
    let (a, _) = train(&cfg, &fx);
    cfg.seed = 1;
    let (b, _) = train(&cfg, &fx);
    assert_ne!(checkpoint_bytes(&a), checkpoint_bytes(&b));
}
