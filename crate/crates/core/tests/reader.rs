use mreader::corpus::{Answer, Dataset, QASetting};
use mreader::dsl::{self, Dims, DslModel};
use mreader::engine::AdamConfig;
use mreader::framework::{
    self, Hook, HookKind, InputModule, LossHook, ReaderConfig, ReaderError, Task, TensorPort,
};
use mreader::textpipe::{Batch, Vocab};
use mreader::zoo::{self, toy, NliOutput, TextInput};

fn small() -> ReaderConfig {
    ReaderConfig {
        repr_dim: 8,
        repr_dim_input: 8,
        batch_size: 4,
        ..ReaderConfig::default()
    }
}

/// Text input that never emits the support tokens.
struct NoSupport(TextInput);

impl InputModule for NoSupport {
    fn name(&self) -> &str {
        "no-support"
    }
    fn output_ports(&self) -> Vec<TensorPort> {
        self.0
            .output_ports()
            .into_iter()
            .filter(|p| p.name != "support")
            .collect()
    }
    fn training_ports(&self) -> Vec<TensorPort> {
        self.0.training_ports()
    }
    fn setup(&mut self, train: &Dataset, config: &ReaderConfig) -> Result<(), ReaderError> {
        self.0.setup(train, config)
    }
    fn vocab(&self) -> Option<&Vocab> {
        self.0.vocab()
    }
    fn set_vocab(&mut self, vocab: Vocab) {
        self.0.set_vocab(vocab)
    }
    fn batches(
        &self,
        data: &Dataset,
        batch_size: usize,
        shuffle_seed: Option<u64>,
        training: bool,
    ) -> Result<Vec<Batch>, ReaderError> {
        self.0.batches(data, batch_size, shuffle_seed, training)
    }
}

#[test]
fn missing_port_is_named_at_assembly() {
    let graph = dsl::compile(dsl::NLI_BASELINE, Task::Nli, Dims::default()).unwrap();
    let err = framework::Reader::assemble(
        Task::Nli,
        Box::new(NoSupport(TextInput::new(Task::Nli))),
        Box::new(DslModel::new(graph)),
        Box::new(NliOutput),
        ReaderConfig::default(),
    )
    .unwrap_err();
    match err {
        ReaderError::PortMismatch {
            port, producers, ..
        } => {
            assert_eq!(port, "support");
            assert_eq!(producers, vec!["no-support".to_string()]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn hooks_fire_on_global_iterations() {
    let data = toy::nli_dataset(40, 2);
    let mut reader = zoo::nli_reader(None, small()).unwrap();
    let mut hooks: Vec<Box<dyn Hook>> = vec![Box::new(LossHook::new(10))];
    let report = reader
        .train(&data, AdamConfig::default(), &mut hooks, 2)
        .unwrap();
    assert_eq!(report.iterations, 20);
    let fired: Vec<(usize, usize)> = report
        .events
        .iter()
        .map(|e| (e.iteration, e.epoch))
        .collect();
    assert_eq!(fired, vec![(10, 0), (20, 1)]);
    assert!(report.events.iter().all(|e| e.kind == HookKind::Loss));
    // The loss hook averages over its epoch, which here is one full epoch.
    for (e, event) in report.events.iter().enumerate() {
        assert!((event.metrics[0].value - report.epoch_losses[e]).abs() < 1e-12);
    }
}

#[test]
fn training_reduces_loss_on_toy_nli() {
    let data = toy::nli_dataset(90, 5);
    let config = ReaderConfig {
        batch_size: 16,
        repr_dim: 16,
        repr_dim_input: 16,
        ..ReaderConfig::default()
    };
    let mut reader = zoo::nli_reader(None, config).unwrap();
    let optim = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };
    let report = reader.train(&data, optim, &mut [], 8).unwrap();
    let losses = &report.epoch_losses;
    assert!(losses.last().unwrap() < &(0.8 * losses[0]), "{losses:?}");
}

#[test]
fn saved_reader_answers_identically() {
    let train = toy::qa_dataset(24, 3);
    let held_out = toy::qa_dataset(5, 4);
    let mut reader = zoo::qa_reader(None, small()).unwrap();
    reader
        .train(&train, AdamConfig::default(), &mut [], 2)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    framework::save(&reader, dir.path()).unwrap();
    let loaded = framework::load(dir.path()).unwrap();
    let (a, b) = (
        reader.answer(&held_out).unwrap(),
        loaded.answer(&held_out).unwrap(),
    );
    assert_eq!(a.len(), 5);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.text, y.text);
        assert_eq!(x.span, y.span);
        assert_eq!(x.score.to_bits(), y.score.to_bits());
    }
}

#[test]
fn nan_embeddings_stop_training() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.txt");
    let row = ["NaN"; 8].join(" ");
    std::fs::write(&path, format!("the {row}\napple {row}\n")).unwrap();
    let config = ReaderConfig {
        embeddings: Some(path.to_string_lossy().into_owned()),
        ..small()
    };
    let mut reader = zoo::nli_reader(None, config).unwrap();
    let err = reader
        .train(&toy::nli_dataset(8, 0), AdamConfig::default(), &mut [], 1)
        .unwrap_err();
    assert!(
        matches!(err, ReaderError::NonFiniteLoss { epoch: 0, batch: 0 }),
        "{err:?}"
    );
}

#[test]
fn qa_without_usable_spans_is_rejected() {
    let mut s = QASetting::new("where ?", vec!["somewhere far".into()]);
    s.answers.push(Answer::text("nowhere"));
    let data = Dataset::new("no-spans", vec![s]);
    let mut reader = zoo::qa_reader(None, small()).unwrap();
    let err = reader
        .train(&data, AdamConfig::default(), &mut [], 1)
        .unwrap_err();
    assert!(matches!(err, ReaderError::NoValidSpan), "{err:?}");
}

#[test]
fn untrained_and_empty_inputs() {
    let reader = zoo::nli_reader(None, small()).unwrap();
    assert!(matches!(
        reader.answer(&toy::nli_dataset(2, 0)),
        Err(ReaderError::NotSetup)
    ));
    let mut reader = zoo::nli_reader(None, small()).unwrap();
    let empty = Dataset::new("empty", vec![]);
    assert!(matches!(
        reader.train(&empty, AdamConfig::default(), &mut [], 1),
        Err(ReaderError::EmptyDataset)
    ));
}
