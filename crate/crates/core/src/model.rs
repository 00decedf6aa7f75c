//! The assembled network and its losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::{pad_events, Sample};
use crate::disentangle::{adversarial_loss, aggregate, hsic_total, pick_column, DomainEncoders, EventDiscriminator};
use crate::encoders::{apply_gating, pool_personality, BiLstm, PersonalityGate};
use crate::error::{Error, Result, StageExt};
use crate::hypergraph::{build_incidence, HypergraphFormer};
use crate::params::{Affine, Bound, Group, ParamStore};
use crate::tape::{Graph, Var};

/// Scalar losses of one sample or the mean over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub dep: f64,
    /// Summed event cross-entropy.
    pub disc: f64,
    /// `disc` divided by the number of scored timesteps.
    pub disc_mean: f64,
    pub adv: f64,
    pub hsic: f64,
    pub main: f64,
    pub disc_accuracy: f64,
}

impl LossBundle {
    /// Elementwise mean; empty input gives the default bundle.
    pub fn mean(items: &[LossBundle]) -> LossBundle {
        if items.is_empty() {
            return LossBundle::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&LossBundle) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBundle {
            dep: sum(|b| b.dep),
            disc: sum(|b| b.disc),
            disc_mean: sum(|b| b.disc_mean),
            adv: sum(|b| b.adv),
            hsic: sum(|b| b.hsic),
            main: sum(|b| b.main),
            disc_accuracy: sum(|b| b.disc_accuracy),
        }
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `T × C` per-timestep class log-probabilities.
    pub log_probs: Var,
    pub publics: Vec<Var>,
    pub privates: Vec<Var>,
    pub disc: Var,
    pub adv: Var,
    pub hsic: Var,
    pub disc_correct: usize,
    pub disc_total: usize,
}

/// Forward pass plus the depression loss and the combined objective.
#[derive(Clone, Debug)]
pub struct Losses {
    pub forward: Forward,
    pub dep: Var,
    pub main: Var,
}

impl Losses {
    pub fn bundle(&self, g: &Graph) -> LossBundle {
        let f = &self.forward;
        let disc = g.value(f.disc).item();
        LossBundle {
            dep: g.value(self.dep).item(),
            disc,
            disc_mean: disc / f.disc_total as f64,
            adv: g.value(f.adv).item(),
            hsic: g.value(f.hsic).item(),
            main: g.value(self.main).item(),
            disc_accuracy: f.disc_correct as f64 / f.disc_total as f64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    visual_lstm: BiLstm,
    audio_lstm: BiLstm,
    personality_lstm: BiLstm,
    gate: PersonalityGate,
    former: HypergraphFormer,
    domains: DomainEncoders,
    discriminator: EventDiscriminator,
    head_hidden: Affine,
    head_out: Affine,
}

impl Model {
    /// Initializes every parameter from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut store = ParamStore::new();
        let visual_lstm = BiLstm::new(&mut store, &mut rng, "visual_lstm", c.visual_dim, c.d1, c.lstm_layers)?;
        let audio_lstm = BiLstm::new(&mut store, &mut rng, "audio_lstm", c.audio_dim, c.d1, c.lstm_layers)?;
        let personality_lstm = BiLstm::new(
            &mut store,
            &mut rng,
            "personality_lstm",
            c.personality_dim,
            c.d1,
            c.lstm_layers,
        )?;
        let gate = PersonalityGate::new(&mut store, &mut rng, "gate", c.d1);
        let former = HypergraphFormer::new(&mut store, &mut rng, "hgf", c.hgf())?;
        let domains = DomainEncoders::new(&mut store, &mut rng, 2 * c.d2, c.d3, c.events, c.encoder_depth);
        let discriminator = EventDiscriminator::new(&mut store, &mut rng, c.d3, c.events);
        let head_hidden = Affine::new(
            &mut store,
            &mut rng,
            "head.hidden",
            Group::Main,
            (1 + c.events) * c.d3,
            c.d3,
        );
        let head_out = Affine::new(&mut store, &mut rng, "head.out", Group::Main, c.d3, c.num_classes);
        Ok(Model {
            config: c.clone(),
            store,
            visual_lstm,
            audio_lstm,
            personality_lstm,
            gate,
            former,
            domains,
            discriminator,
            head_hidden,
            head_out,
        })
    }

    /// Frame count every event of `samples` is padded to: the longest event
    /// in the group, and never below the window.
    pub fn target_frames<'a>(&self, samples: impl IntoIterator<Item = &'a Sample>) -> usize {
        samples
            .into_iter()
            .map(Sample::max_frames)
            .max()
            .unwrap_or(0)
            .max(self.config.window)
    }

    pub fn pad(&self, sample: &Sample, target: usize) -> Result<Sample> {
        pad_events(sample, target, self.config.padding)
    }

    /// Runs the network on one sample whose events all have the same length.
    pub fn forward(&self, g: &mut Graph, p: &Bound, sample: &Sample) -> Result<Forward> {
        let c = &self.config;
        if sample.events.len() != c.events {
            return Err(Error::InvalidArgument(format!(
                "sample {} has {} events, model expects {}",
                sample.id,
                sample.events.len(),
                c.events
            )));
        }
        let frames = sample.events[0].frames();
        if sample.events.iter().any(|e| e.frames() != frames) {
            return Err(Error::InvalidArgument(format!(
                "sample {}: events must be padded to a common length",
                sample.id
            )))
            .stage("padding");
        }

        let personality = g.constant(sample.personality.clone())?;
        let enc = self
            .personality_lstm
            .encode(g, p, personality)
            .stage("personality encoder")?;
        let p_tilde = pool_personality(g, &enc, c.personality_pooling)?;
        let w_gate = self.gate.gate_weights(g, p, p_tilde).stage("personality gate")?;

        let incidence = build_incidence(frames, c.window).stage("hypergraph")?;
        let propagation = g.constant(incidence.propagation()?)?;

        let mut publics = Vec::with_capacity(c.events);
        let mut privates = Vec::with_capacity(c.events);
        for (k, event) in sample.events.iter().enumerate() {
            let v = g.constant(event.visual.clone())?;
            let a = g.constant(event.audio.clone())?;
            let v_seq = self.visual_lstm.encode(g, p, v).stage("visual encoder")?.seq;
            let a_seq = self.audio_lstm.encode(g, p, a).stage("audio encoder")?.seq;
            let v_gated = apply_gating(g, v_seq, w_gate).stage("gating")?;
            let a_gated = apply_gating(g, a_seq, w_gate).stage("gating")?;
            let h = self
                .former
                .forward(g, p, a_gated, v_gated, propagation)
                .stage("hypergraph-former")?;
            publics.push(self.domains.encode_public(g, p, h).stage("public encoder")?);
            privates.push(self.domains.encode_private(g, p, h, k).stage("private encoder")?);
        }

        let fused = aggregate(g, &publics, &privates).stage("aggregate")?;
        let hidden = self.head_hidden.forward(g, p, fused).stage("classifier")?;
        let hidden = g.relu(hidden)?;
        let logits = self.head_out.forward(g, p, hidden).stage("classifier")?;
        let log_probs = g.log_softmax(logits)?;

        let disc = self.discriminator.loss(g, p, &publics).stage("discriminator")?;
        let adv = adversarial_loss(g, disc.loss)?;
        let hsic = hsic_total(g, &privates).stage("hsic")?;
        Ok(Forward {
            log_probs,
            publics,
            privates,
            disc: disc.loss,
            adv,
            hsic,
            disc_correct: disc.correct,
            disc_total: disc.total,
        })
    }

    /// Forward pass plus `L_dep` and `L_main = αL_dep + βL_adv + γL_HSIC`.
    pub fn losses(&self, g: &mut Graph, p: &Bound, sample: &Sample) -> Result<Losses> {
        let forward = self.forward(g, p, sample)?;
        let dep = depression_loss(g, forward.log_probs, sample.label)?;
        let c = &self.config;
        let a = g.scale(dep, c.alpha)?;
        let b = g.scale(forward.adv, c.beta)?;
        let h = g.scale(forward.hsic, c.gamma)?;
        let ab = g.add(a, b)?;
        let main = g.add(ab, h)?;
        Ok(Losses { forward, dep, main })
    }

    /// Untaped inference on one sample padded on its own; returns the
    /// `T × C` log-probabilities, public and private features.
    pub fn infer(&self, sample: &Sample) -> Result<Inference> {
        let padded = self.pad(sample, self.target_frames([sample]))?;
        let mut g = Graph::new();
        let p = self.store.bind_where(&mut g, |_| false)?;
        let f = self.forward(&mut g, &p, &padded)?;
        Ok(Inference {
            log_probs: g.value(f.log_probs).clone(),
            publics: f.publics.iter().map(|&v| g.value(v).clone()).collect(),
            privates: f.privates.iter().map(|&v| g.value(v).clone()).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub log_probs: crate::Tensor,
    pub publics: Vec<crate::Tensor>,
    pub privates: Vec<crate::Tensor>,
}

/// Mean over timesteps of `−log p(label)`.
pub fn depression_loss(g: &mut Graph, log_probs: Var, label: usize) -> Result<Var> {
    let (frames, classes) = (g.shape(log_probs)[0], g.shape(log_probs)[1]);
    if label >= classes {
        return Err(Error::InvalidArgument(format!("label {label} outside 0..{classes}")));
    }
    let picked = pick_column(g, log_probs, label)?;
    g.scale(picked, -1.0 / frames as f64)
}
