//! FedAvg with compressed uplinks.
//!
//! Each round the server samples clients, every sampled client runs a few
//! steps of mini-batch SGD from the global parameters, compresses the
//! resulting change, and the server decodes and averages those changes into
//! the global model.
//!
//! Clients within a round run in parallel. Every random draw comes from a
//! stream keyed by `(seed, purpose, client, round)` and updates are summed in
//! client-id order, so results do not depend on the thread schedule.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::cgsa::{cgsa_optimize, CgsaParams};
use crate::codec::{decode, encode, EncodedBlob};
use crate::error::{Error, Result};
use crate::mlkit::{Dataset, ModelSpec, Objective};
use crate::quantizer::{dequantize, quantize_mixed, quantize_uniform, DenseVector, MAX_UNIFORM_BITS};
use crate::rng::{client_stream, stream, Purpose};

/// How clients encode their updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Compressor {
    /// Raw 32-bit floats.
    None,
    /// Every parameter at the same bit-width.
    Uniform(u8),
    /// Per-parameter bit-widths from the annealing search under a budget of
    /// `bits_per_param * d` bits.
    FedFq { bits_per_param: f64, cgsa: CgsaParams },
}

impl Compressor {
    pub fn fedfq(bits_per_param: f64) -> Self {
        Compressor::FedFq { bits_per_param, cgsa: CgsaParams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Compressor::None => Ok(()),
            Compressor::Uniform(b) if (1..=MAX_UNIFORM_BITS).contains(&b) => Ok(()),
            Compressor::Uniform(b) => Err(Error::InvalidBitWidth(b as u32)),
            Compressor::FedFq { bits_per_param, cgsa } => {
                if !(bits_per_param > 0.0 && bits_per_param <= 8.0) {
                    return Err(Error::Config(format!(
                        "bits per parameter must lie in (0, 8], got {bits_per_param}"
                    )));
                }
                cgsa.validate()
            }
        }
    }

    /// Bit budget for `len` parameters: `bits_per_param * len` rounded down
    /// to an even number (the ladder moves in steps of 2 bits), so the
    /// payload never exceeds the nominal rate.
    pub fn budget(bits_per_param: f64, len: usize) -> u64 {
        let units = (bits_per_param * len as f64 / 2.0 + 1e-9).floor() as u64;
        (2 * units).min(8 * len as u64)
    }
}

impl fmt::Display for Compressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Compressor::None => write!(f, "none"),
            Compressor::Uniform(b) => write!(f, "uniform:{b}"),
            Compressor::FedFq { bits_per_param, .. } => write!(f, "fedfq:{bits_per_param}"),
        }
    }
}

impl FromStr for Compressor {
    type Err = Error;

    /// `none`, `uniform:<bits>` or `fedfq:<bits per parameter>`; the search
    /// uses default parameters.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("unknown compressor {s:?}"));
        let compressor = match s.split_once(':') {
            None if s.eq_ignore_ascii_case("none") => Compressor::None,
            Some((kind, arg)) if kind.eq_ignore_ascii_case("uniform") => {
                Compressor::Uniform(arg.trim().parse().map_err(|_| bad())?)
            }
            Some((kind, arg)) if kind.eq_ignore_ascii_case("fedfq") => {
                Compressor::fedfq(arg.trim().parse().map_err(|_| bad())?)
            }
            _ => return Err(bad()),
        };
        compressor.validate()?;
        Ok(compressor)
    }
}

/// Federation and optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FlConfig {
    pub n_clients: usize,
    pub clients_per_round: usize,
    /// SGD steps per client per round.
    pub local_steps: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    pub batch_size: usize,
    pub compressor: Compressor,
    pub seed: u64,
    /// Evaluate (and emit metrics) every this many rounds, and after the last.
    pub eval_every: usize,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            n_clients: 100,
            clients_per_round: 10,
            local_steps: 5,
            learning_rate: 0.15,
            rounds: 200,
            batch_size: 50,
            compressor: Compressor::None,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_clients == 0 {
            return bad("n_clients must be positive".into());
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.n_clients {
            return bad(format!(
                "clients_per_round must lie in 1..={}, got {}",
                self.n_clients, self.clients_per_round
            ));
        }
        if self.local_steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("local_steps, batch_size and eval_every must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("invalid learning rate {}", self.learning_rate));
        }
        self.compressor.validate()
    }
}

/// One client: its id and local data.
#[derive(Debug, Clone, Copy)]
pub struct ClientState<'a> {
    pub id: usize,
    pub data: &'a Dataset,
}

impl ClientState<'_> {
    /// This client's stream for `purpose` in `round`.
    pub fn rng(&self, seed: u64, purpose: Purpose, round: usize) -> crate::rng::SimRng {
        client_stream(seed, purpose, self.id, round)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: DenseVector,
    /// Rounds aggregated so far.
    pub round: usize,
}

/// Local SGD settings for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// Runs `steps` mini-batch SGD steps from `theta` on the client's data and
/// returns the parameter change. Batches are drawn without replacement,
/// reshuffling whenever the client's data runs out; a batch larger than the
/// data is the full data.
pub fn local_train<M: Objective + ?Sized, R: Rng + ?Sized>(
    model: &M,
    client: &ClientState<'_>,
    theta: &DenseVector,
    local: &LocalTraining,
    round: usize,
    rng: &mut R,
) -> Result<DenseVector> {
    if theta.len() != model.num_params() {
        return Err(Error::LengthMismatch { expected: model.num_params(), actual: theta.len() });
    }
    let diverged = |what| Error::Diverged { round, client: client.id, what };
    let start = theta.to_f64();
    let mut params = start.clone();
    let m = client.data.len();
    let batch = local.batch_size.min(m);
    let mut order: Vec<usize> = (0..m).collect();
    let mut cursor = m;
    for _ in 0..local.steps {
        if cursor + batch > m {
            order.shuffle(rng);
            cursor = 0;
        }
        let (loss, grad) = model.loss_and_grad(&params, client.data, &order[cursor..cursor + batch])?;
        cursor += batch;
        if !loss.is_finite() {
            return Err(diverged("loss"));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged("gradient"));
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= local.learning_rate * g;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(diverged("parameters"));
        }
    }
    let delta: Vec<f64> = params.iter().zip(&start).map(|(p, s)| p - s).collect();
    DenseVector::from_f64(&delta).map_err(|_| diverged("update"))
}

/// What a client sends to the server.
#[derive(Debug, Clone, PartialEq)]
pub enum Uplink {
    /// Uncompressed update, 32 bits per parameter.
    Raw(DenseVector),
    Encoded(EncodedBlob),
}

impl Uplink {
    pub fn payload_bits(&self) -> u64 {
        match self {
            Uplink::Raw(h) => 32 * h.len() as u64,
            Uplink::Encoded(blob) => blob.payload_bits,
        }
    }

    pub fn total_bits(&self) -> u64 {
        match self {
            Uplink::Raw(h) => 32 * h.len() as u64,
            Uplink::Encoded(blob) => blob.total_bits(),
        }
    }

    /// The update as the server reconstructs it.
    pub fn decode(&self) -> Result<DenseVector> {
        match self {
            Uplink::Raw(h) => Ok(h.clone()),
            Uplink::Encoded(blob) => Ok(dequantize(&decode(&blob.bytes)?)),
        }
    }
}

/// Encodes `h` for the uplink.
pub fn compress_update<R: Rng + ?Sized>(h: &DenseVector, compressor: &Compressor, rng: &mut R) -> Result<Uplink> {
    let q = match *compressor {
        Compressor::None => return Ok(Uplink::Raw(h.clone())),
        Compressor::Uniform(b) => quantize_uniform(h, b, rng)?,
        Compressor::FedFq { bits_per_param, ref cgsa } => {
            let budget = Compressor::budget(bits_per_param, h.len());
            let alloc = cgsa_optimize(h, budget, cgsa, rng)?;
            quantize_mixed(h, &alloc, rng)?
        }
    };
    Ok(Uplink::Encoded(encode(&q)))
}

/// `theta` plus the mean of `updates`, accumulated in f64 in list order.
pub fn aggregate(theta: &DenseVector, updates: &[DenseVector]) -> Result<DenseVector> {
    if updates.is_empty() {
        return Err(Error::NoUpdates);
    }
    let mut sum = vec![0.0f64; theta.len()];
    for u in updates {
        if u.len() != theta.len() {
            return Err(Error::LengthMismatch { expected: theta.len(), actual: u.len() });
        }
        for (s, &v) in sum.iter_mut().zip(u.iter()) {
            *s += v as f64;
        }
    }
    let n = updates.len() as f64;
    let next: Vec<f64> = theta.iter().zip(&sum).map(|(&t, s)| t as f64 + s / n).collect();
    DenseVector::from_f64(&next)
}

/// `per_round` distinct client ids out of `n`, sorted; a function of
/// `(seed, round)` only.
pub fn sample_clients(n: usize, per_round: usize, seed: u64, round: usize) -> Result<Vec<usize>> {
    if per_round == 0 || per_round > n {
        return Err(Error::Config(format!("cannot sample {per_round} of {n} clients")));
    }
    let mut rng = stream(seed, Purpose::Sampling, round as u64, 0);
    let mut ids = index::sample(&mut rng, n, per_round).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Client shards plus the held-out evaluation set.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub clients: Vec<Dataset>,
    pub test: Dataset,
}

/// Metrics after one evaluated round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// 1-based index of the round just aggregated.
    pub round: usize,
    /// Global-model loss over all client training data.
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// Uplink payload of this round, summed over sampled clients.
    pub uplink_payload_bits: u64,
    /// Uplink payload plus headers of this round.
    pub uplink_total_bits: u64,
    pub cumulative_payload_bits: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub metrics: Vec<RoundMetrics>,
    pub model: GlobalModel,
}

/// Runs `config.rounds` rounds of FedAvg and evaluates the global model on
/// the held-out set.
pub fn run_experiment(config: &FlConfig, model: &ModelSpec, data: &FederatedData) -> Result<ExperimentResult> {
    config.validate()?;
    if data.clients.len() != config.n_clients {
        return Err(Error::Config(format!(
            "{} client shards for n_clients = {}",
            data.clients.len(),
            config.n_clients
        )));
    }
    let seed = config.seed;
    let init = model.init_params(&mut stream(seed, Purpose::ModelInit, 0, 0));
    let mut global = GlobalModel { params: DenseVector::from_f64(&init)?, round: 0 };
    let local = LocalTraining {
        steps: config.local_steps,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
    };
    let train_total: usize = data.clients.iter().map(Dataset::len).sum();

    let mut metrics = Vec::new();
    let mut cumulative = 0u64;
    for round in 0..config.rounds {
        let started = Instant::now();
        let ids = sample_clients(config.n_clients, config.clients_per_round, seed, round)?;
        let uplinks = ids
            .par_iter()
            .map(|&id| {
                let client = ClientState { id, data: &data.clients[id] };
                let mut train_rng = client.rng(seed, Purpose::LocalTraining, round);
                let h = local_train(model, &client, &global.params, &local, round, &mut train_rng)?;
                let mut compress_rng = client.rng(seed, Purpose::Compression, round);
                compress_update(&h, &config.compressor, &mut compress_rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let payload: u64 = uplinks.iter().map(Uplink::payload_bits).sum();
        let total: u64 = uplinks.iter().map(Uplink::total_bits).sum();
        let decoded = uplinks.iter().map(Uplink::decode).collect::<Result<Vec<_>>>()?;
        global.params = aggregate(&global.params, &decoded)?;
        global.round = round + 1;
        cumulative += payload;

        if global.round.is_multiple_of(config.eval_every) || global.round == config.rounds {
            let params = global.params.to_f64();
            let loss_sum = data
                .clients
                .par_iter()
                .map(|c| model.full_loss(&params, c).map(|l| l * c.len() as f64))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum::<f64>();
            metrics.push(RoundMetrics {
                round: global.round,
                train_loss: loss_sum / train_total as f64,
                test_accuracy: model.accuracy(&params, &data.test)?,
                uplink_payload_bits: payload,
                uplink_total_bits: total,
                cumulative_payload_bits: cumulative,
                wall_ms: started.elapsed().as_millis() as u64,
            });
        }
    }
    Ok(ExperimentResult { metrics, model: global })
}
