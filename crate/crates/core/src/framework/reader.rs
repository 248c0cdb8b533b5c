use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    Hook, HookEvent, InputModule, ModelModule, OutputModule, ReaderConfig, ReaderError, Task,
    TensorPort,
};
use crate::corpus::{Dataset, Span};
use crate::engine::{Adam, AdamConfig, Tape, Tensor};
use crate::metrics::{accuracy, span_f1_em, MetricReport};
use crate::par::{self, Execution};
use crate::textpipe::{load_embeddings, Batch};

/// One answer produced by a reader.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub text: String,
    pub score: f64,
    pub span: Option<Span>,
    /// Probability per candidate answer, for classification readers.
    pub probabilities: Vec<(String, f64)>,
}

impl Prediction {
    pub fn probability_of(&self, answer: &str) -> Option<f64> {
        if self.probabilities.is_empty() {
            return None;
        }
        Some(
            self.probabilities
                .iter()
                .find(|(c, _)| c == answer)
                .map_or(0.0, |(_, p)| *p),
        )
    }
}

/// An instance whose gold answer received low (or otherwise selected)
/// probability.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedExample {
    pub index: usize,
    pub question: String,
    pub support: Vec<String>,
    pub gold: String,
    pub prediction: String,
    pub probability: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    /// Mean training loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub iterations: usize,
    pub events: Vec<HookEvent>,
}

/// An input, a model and an output module whose ports have been checked
/// against each other.
pub struct Reader {
    pub task: Task,
    pub config: ReaderConfig,
    input: Box<dyn InputModule>,
    model: Box<dyn ModelModule>,
    output: Box<dyn OutputModule>,
    ready: bool,
}

impl std::fmt::Debug for Reader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Reader")
            .field("task", &self.task)
            .field("input", &self.input.name())
            .field("model", &self.model.name())
            .field("output", &self.output.name())
            .field("ready", &self.ready)
            .finish()
    }
}

fn require(
    required: &[TensorPort],
    producers: &[(&str, &[TensorPort])],
    consumer: &str,
) -> Result<(), ReaderError> {
    for port in required {
        let found = producers
            .iter()
            .any(|(_, ports)| ports.iter().any(|p| p.compatible(port)));
        if !found {
            return Err(ReaderError::PortMismatch {
                port: port.name.clone(),
                producers: producers.iter().map(|(n, _)| n.to_string()).collect(),
                consumer: consumer.to_string(),
            });
        }
    }
    Ok(())
}

impl Reader {
    /// Checks the module signatures and builds a reader. The first port that
    /// no upstream module produces is reported.
    pub fn assemble(
        task: Task,
        input: Box<dyn InputModule>,
        model: Box<dyn ModelModule>,
        output: Box<dyn OutputModule>,
        config: ReaderConfig,
    ) -> Result<Self, ReaderError> {
        config.validate()?;
        let reader = Self {
            task,
            config,
            input,
            model,
            output,
            ready: false,
        };
        reader.validate()?;
        Ok(reader)
    }

    /// Runs signature validation again; assembly is idempotent.
    pub fn validate(&self) -> Result<(), ReaderError> {
        let sig = self.model.signature();
        let input_out = self.input.output_ports();
        let input_train = self.input.training_ports();
        let (iname, mname) = (self.input.name(), self.model.name());
        require(&sig.input_ports, &[(iname, &input_out)], mname)?;
        require(
            &sig.training_input_ports,
            &[
                (iname, &input_out),
                (&format!("{iname} (training)"), &input_train),
            ],
            mname,
        )?;
        require(
            &self.output.input_ports(),
            &[(iname, &input_out), (mname, &sig.output_ports)],
            self.output.name(),
        )?;
        if !sig
            .training_output_ports
            .iter()
            .any(|p| p.dims.is_empty() && p.dtype == crate::engine::DType::F64)
        {
            return Err(ReaderError::PortMismatch {
                port: "loss".into(),
                producers: vec![mname.to_string()],
                consumer: "training".into(),
            });
        }
        Ok(())
    }

    pub fn is_ready(&self) -> bool {
        self.ready
    }

    pub fn input(&self) -> &dyn InputModule {
        self.input.as_ref()
    }

    pub fn model(&self) -> &dyn ModelModule {
        self.model.as_ref()
    }

    pub fn model_mut(&mut self) -> &mut dyn ModelModule {
        self.model.as_mut()
    }

    pub fn output(&self) -> &dyn OutputModule {
        self.output.as_ref()
    }

    /// Builds the vocabulary from `train` and allocates parameters.
    pub fn setup(&mut self, train: &Dataset) -> Result<(), ReaderError> {
        if train.is_empty() {
            return Err(ReaderError::EmptyDataset);
        }
        self.input.setup(train, &self.config)?;
        let vocab = self.input.vocab().ok_or(ReaderError::NotSetup)?;
        let embeddings = match &self.config.embeddings {
            Some(path) => Some(load_embeddings(
                std::path::Path::new(path),
                vocab,
                self.config.repr_dim_input,
                self.config.seed,
            )?),
            None => None,
        };
        self.model.setup(
            vocab,
            embeddings.as_ref().map(|e| &e.table),
            self.config.seed,
        )?;
        self.ready = true;
        Ok(())
    }

    /// Re-creates the state of a saved reader from its vocabulary and
    /// parameters.
    pub(crate) fn restore(
        &mut self,
        vocab: crate::textpipe::Vocab,
        params: crate::engine::ParamStore,
    ) -> Result<(), ReaderError> {
        self.input.set_vocab(vocab);
        let vocab = self.input.vocab().ok_or(ReaderError::NotSetup)?;
        self.model.setup(vocab, None, self.config.seed)?;
        self.model
            .params_mut()
            .assign_from(params)
            .map_err(|e| match e {
                crate::engine::EngineError::CorruptCheckpoint(m) => {
                    ReaderError::CorruptCheckpoint(m)
                }
                other => other.into(),
            })?;
        self.ready = true;
        Ok(())
    }

    /// Trains for `max_epochs` passes over `data`, setting the reader up
    /// first if needed. Each epoch visits the data in an order seeded by
    /// `seed + epoch`, including the final short batch.
    pub fn train(
        &mut self,
        data: &Dataset,
        optim: AdamConfig,
        hooks: &mut [Box<dyn Hook>],
        max_epochs: usize,
    ) -> Result<TrainingReport, ReaderError> {
        if data.is_empty() {
            return Err(ReaderError::EmptyDataset);
        }
        if !self.ready {
            self.setup(data)?;
        }
        let mut adam = Adam::new(optim);
        let mut report = TrainingReport::default();
        let seed = self.config.seed;
        for epoch in 0..max_epochs {
            let batches = self.input.batches(
                data,
                self.config.batch_size,
                Some(seed.wrapping_add(epoch as u64)),
                true,
            )?;
            for h in hooks.iter_mut() {
                h.epoch_start();
            }
            let mut total = 0.0;
            for (bi, batch) in batches.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ (report.iterations as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                let mut tape = Tape::new();
                let bound = self.model.params().bind(&mut tape)?;
                let outputs = self
                    .model
                    .forward(&mut tape, &bound, batch, true, &mut rng)?;
                let loss = self.model.loss(&mut tape, &outputs, batch)?;
                let value = tape.value(loss)[0];
                if !value.is_finite() {
                    return Err(ReaderError::NonFiniteLoss { epoch, batch: bi });
                }
                tape.backward(loss)?;
                let grads = bound.grads(&tape);
                adam.step(self.model.params_mut(), &grads)?;
                total += value;
                report.iterations += 1;
                for h in hooks.iter_mut() {
                    h.observe(value);
                    if report.iterations % h.interval() == 0 {
                        let event = h.fire(report.iterations, epoch, self)?;
                        report.events.push(event);
                    }
                }
            }
            report
                .epoch_losses
                .push(total / batches.len().max(1) as f64);
        }
        Ok(report)
    }

    fn run_batch(&self, data: &Dataset, batch: &Batch) -> Result<Vec<Prediction>, ReaderError> {
        let mut tape = Tape::new();
        let bound = self.model.params().bind(&mut tape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let outputs = self
            .model
            .forward(&mut tape, &bound, batch, false, &mut rng)?;
        let wanted: BTreeMap<String, Tensor> = self
            .output
            .input_ports()
            .iter()
            .filter_map(|p| {
                outputs
                    .get(&p.name)
                    .map(|&v| (p.name.clone(), tape.to_tensor(v)))
            })
            .collect();
        self.output.decode(data, batch, &wanted)
    }

    /// One prediction per instance of `data`, in order.
    pub fn answer(&self, data: &Dataset) -> Result<Vec<Prediction>, ReaderError> {
        if !self.ready {
            return Err(ReaderError::NotSetup);
        }
        if data.is_empty() {
            return Ok(Vec::new());
        }
        let batches = self
            .input
            .batches(data, self.config.batch_size, None, false)?;
        let results = par::map_range(batches.len(), Execution::default(), |i| {
            self.run_batch(data, &batches[i])
        });
        let mut out = Vec::with_capacity(data.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Accuracy for NLI; token F1 and exact match for QA.
    pub fn evaluate(&self, data: &Dataset) -> Result<Vec<MetricReport>, ReaderError> {
        let predictions = self.answer(data)?;
        let n = predictions.len();
        match self.task {
            Task::Qa => {
                let (mut f1, mut em) = (0.0, 0.0);
                for (p, inst) in predictions.iter().zip(&data.instances) {
                    let golds: Vec<&str> = inst.answers.iter().map(|a| a.text.as_str()).collect();
                    let (f, e) = span_f1_em(&p.text, &golds)?;
                    f1 += f;
                    em += e;
                }
                let d = n.max(1) as f64;
                Ok(vec![
                    MetricReport::new("f1", f1 / d, n),
                    MetricReport::new("exact_match", em / d, n),
                ])
            }
            _ => {
                let preds: Vec<&str> = predictions.iter().map(|p| p.text.as_str()).collect();
                let golds: Vec<&str> = data
                    .instances
                    .iter()
                    .map(|i| i.answers.first().map_or("", |a| a.text.as_str()))
                    .collect();
                Ok(vec![MetricReport::new(
                    "accuracy",
                    accuracy(&preds, &golds)?,
                    n,
                )])
            }
        }
    }
}

/// Up to `limit` instances whose gold answer received a probability in
/// `[lo, hi]`, in dataset order.
pub fn misclassification_report(
    reader: &Reader,
    data: &Dataset,
    lo: f64,
    hi: f64,
    limit: usize,
) -> Result<Vec<AnnotatedExample>, ReaderError> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(ReaderError::InvalidInterval { lo, hi });
    }
    let predictions = reader.answer(data)?;
    let mut out = Vec::new();
    for (index, (pred, inst)) in predictions.iter().zip(&data.instances).enumerate() {
        if out.len() >= limit {
            break;
        }
        let Some(gold) = inst.answers.first() else {
            continue;
        };
        let probability = pred
            .probability_of(&gold.text)
            .ok_or(ReaderError::NotClassification)?;
        if (lo..=hi).contains(&probability) {
            out.push(AnnotatedExample {
                index,
                question: inst.question.clone(),
                support: inst.support.clone(),
                gold: gold.text.clone(),
                prediction: pred.text.clone(),
                probability,
            });
        }
    }
    Ok(out)
}
