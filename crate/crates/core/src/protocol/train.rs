use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{partition_vertical, Dataset, PartitionSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Layer, LayerKind, LocalModel, Sgd};
use crate::protocol::{
    cross_entropy, cross_entropy_logit_grad, Coordinator, GradAt, Head, Participant, ProtocolKind,
    VFLSystem,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn heterolr() -> Self {
        Self {
            epochs: 30,
            lr: 0.05,
            batch: 64,
            momentum: 0.9,
            seed: 0,
        }
    }

    pub fn splitnn() -> Self {
        Self {
            epochs: 10,
            lr: 0.01,
            ..Self::heterolr()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::heterolr()
    }
}

/// Layer widths shared by every participant and the top model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitArchitecture {
    pub local_hidden: Vec<usize>,
    pub local_out: usize,
    pub top_hidden: Vec<usize>,
}

impl Default for SplitArchitecture {
    fn default() -> Self {
        Self {
            local_hidden: vec![64],
            local_out: 32,
            top_hidden: vec![32],
        }
    }
}

/// Which system to train.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Linear scores with a sigmoid head; binary labels only.
    Heterolr,
    /// Linear scores with a sigmoid or softmax head.
    HeterolrStyle,
    Splitnn {
        #[serde(default)]
        arch: SplitArchitecture,
    },
}

impl ModelSpec {
    pub fn protocol(&self) -> ProtocolKind {
        match self {
            Self::Splitnn { .. } => ProtocolKind::SplitNN,
            _ => ProtocolKind::HeteroLR,
        }
    }

    /// Training defaults for this kind of system.
    pub fn default_train(&self) -> TrainConfig {
        match self {
            Self::Splitnn { .. } => TrainConfig::splitnn(),
            _ => TrainConfig::heterolr(),
        }
    }

    pub fn train(
        &self,
        train: &Dataset,
        spec: &PartitionSpec,
        cfg: &TrainConfig,
    ) -> Result<TrainOutcome> {
        match self {
            Self::Heterolr => train_heterolr(train, spec, cfg),
            Self::HeterolrStyle => train_heterolr_style(train, spec, cfg),
            Self::Splitnn { arch } => train_splitnn(train, spec, arch, cfg),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub system: VFLSystem,
    /// Mean training cross-entropy per epoch.
    pub loss_history: Vec<f64>,
}

/// Binary HeteroLR: each participant holds one linear score, the coordinator
/// applies a sigmoid to their sum.
pub fn train_heterolr(
    train: &Dataset,
    spec: &PartitionSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.class_count() != 2 {
        return Err(Error::invalid(format!(
            "HeteroLR needs binary labels, dataset has {} classes",
            train.class_count()
        )));
    }
    train_heterolr_style(train, spec, cfg)
}

/// HeteroLR for two classes; for more, each participant holds a linear map to
/// C scores and the coordinator applies a softmax to their sum.
pub fn train_heterolr_style(
    train: &Dataset,
    spec: &PartitionSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let c = train.class_count();
    let (width, head) = if c == 2 {
        (1, Head::Sigmoid)
    } else {
        (c, Head::Softmax)
    };
    let participants = (0..spec.participants())
        .map(|p| {
            let cols = spec.columns(p).to_vec();
            let layer = Layer::linear(Matrix::zeros(width, cols.len()), vec![0.0; width])?;
            Participant::new(p, cols, LocalModel::new(vec![layer])?)
        })
        .collect::<Result<Vec<_>>>()?;
    let system = VFLSystem::new(
        ProtocolKind::HeteroLR,
        participants,
        Coordinator::Aggregate(head),
        c,
    )?;
    fit(system, train, spec, cfg)
}

/// SplitNN with ReLU MLP locals and a softmax-headed top model.
pub fn train_splitnn(
    train: &Dataset,
    spec: &PartitionSpec,
    arch: &SplitArchitecture,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if arch.local_out == 0 || arch.local_hidden.contains(&0) || arch.top_hidden.contains(&0) {
        return Err(Error::invalid("architecture widths must be positive"));
    }
    let c = train.class_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let participants = (0..spec.participants())
        .map(|p| {
            let cols = spec.columns(p).to_vec();
            let mut widths = vec![cols.len()];
            widths.extend(&arch.local_hidden);
            widths.push(arch.local_out);
            Participant::new(p, cols, LocalModel::mlp(&widths, None, &mut rng)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut widths = vec![arch.local_out * spec.participants()];
    widths.extend(&arch.top_hidden);
    widths.push(c);
    let top = LocalModel::mlp(&widths, Some(LayerKind::Softmax), &mut rng)?;
    let system = VFLSystem::new(
        ProtocolKind::SplitNN,
        participants,
        Coordinator::Top(top),
        c,
    )?;
    fit(system, train, spec, cfg)
}

fn fit(
    mut system: VFLSystem,
    train: &Dataset,
    spec: &PartitionSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let views = partition_vertical(&train.features, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut local_opts: Vec<Sgd> = (0..views.len())
        .map(|_| Sgd::new(cfg.lr, cfg.momentum))
        .collect::<Result<_>>()?;
    let mut top_opt = Sgd::new(cfg.lr, cfg.momentum)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<Matrix> = views.iter().map(|v| v.select_rows(chunk)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let refs: Vec<&Matrix> = batch.iter().collect();
            let trace = system.trace(&refs)?;
            total += cross_entropy(trace.output(), &labels) * chunk.len() as f64;
            let g = cross_entropy_logit_grad(trace.output(), &labels, 1.0 / chunk.len() as f64);
            let grads = system.backward(&trace, GradAt::Logits(&g), true)?;
            for ((p, opt), g) in system
                .participants
                .iter_mut()
                .zip(&mut local_opts)
                .zip(&grads.locals)
            {
                opt.step(&mut p.model, &g.params)?;
            }
            if let (Coordinator::Top(top), Some(g)) = (&mut system.coordinator, &grads.top) {
                top_opt.step(top, g)?;
            }
        }
        history.push(total / train.len() as f64);
    }
    Ok(TrainOutcome {
        system,
        loss_history: history,
    })
}
