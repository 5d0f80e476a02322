//! Binary checkpoints with bit-exact round trips.
//!
//! A full checkpoint freezes everything the training loop needs to continue
//! as if it had never stopped: parameters, optimizer accumulator, active
//! penalty terms, detector buffer, every random stream position, the log so
//! far, and the per-map parameter snapshots. Checkpoints are only taken at
//! episode boundaries, where environments are about to be re-seeded anyway,
//! so env states never need to be stored.
//!
//! All integers are little-endian; floats are stored as raw IEEE 754 bits,
//! so save -> load -> save reproduces identical bytes.

use crate::config;
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::rng::RngState;
use crate::strategies::{CellConfig, LogRow, Trainer};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DGCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const PARAMS_MAGIC: [u8; 4] = *b"DGPV";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }
    fn str(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
    fn rng(&mut self, v: &RngState) {
        self.buf.extend_from_slice(&v.seed);
        self.u64(v.stream);
        self.u128(v.word_pos);
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Reader<'a> {
        Reader { data, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > self.data.len() as u64 {
            return Err(Error::Format("implausible length in checkpoint".into()));
        }
        Ok(n as usize)
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn str(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::Format("invalid utf-8 in checkpoint".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn rng(&mut self) -> Result<RngState> {
        let seed: [u8; 32] = self.take(32)?.try_into().unwrap();
        let stream = self.u64()?;
        let word_pos = self.u128()?;
        Ok(RngState {
            seed,
            stream,
            word_pos,
        })
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyTermData {
    pub fisher: Vec<f64>,
    pub fisher_episode: u64,
    pub fisher_samples: u64,
    pub anchor: Vec<f64>,
    pub anchor_episode: u64,
}

/// Everything needed to resume a training cell at an episode boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointData {
    /// Canonical single-cell config text; resume refuses a mismatch.
    pub config_text: String,
    pub episode: u64,
    pub params: Vec<f64>,
    pub opt_accumulator: Vec<f64>,
    pub penalties_accumulate: bool,
    pub penalty_terms: Vec<PenaltyTermData>,
    pub detector_recorded: u64,
    pub detector_buffer: Vec<f64>,
    pub reset_rng: RngState,
    pub fisher_rng: RngState,
    pub map_rng: RngState,
    pub policy_rngs: Vec<RngState>,
    pub log: Vec<LogRow>,
    pub map_checkpoints: Vec<Vec<f64>>,
    pub reset_history: Vec<(u64, u8)>,
}

pub fn encode_checkpoint(data: &CheckpointData) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(&CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.str(&data.config_text);
    w.u64(data.episode);
    w.f64s(&data.params);
    w.f64s(&data.opt_accumulator);
    w.u8(data.penalties_accumulate as u8);
    w.u64(data.penalty_terms.len() as u64);
    for term in &data.penalty_terms {
        w.f64s(&term.fisher);
        w.u64(term.fisher_episode);
        w.u64(term.fisher_samples);
        w.f64s(&term.anchor);
        w.u64(term.anchor_episode);
    }
    w.u64(data.detector_recorded);
    w.f64s(&data.detector_buffer);
    w.rng(&data.reset_rng);
    w.rng(&data.fisher_rng);
    w.rng(&data.map_rng);
    w.u64(data.policy_rngs.len() as u64);
    for rng in &data.policy_rngs {
        w.rng(rng);
    }
    w.u64(data.log.len() as u64);
    for row in &data.log {
        w.u64(row.episode as u64);
        w.u8(row.map);
        w.f64(row.reward);
        w.f64(row.reward_short);
        w.f64(row.reward_long);
        w.f64(row.lambda);
        w.f64(row.policy_loss);
        w.f64(row.value_loss);
        w.f64(row.entropy);
        w.u64(row.param_hash);
    }
    w.u64(data.map_checkpoints.len() as u64);
    for params in &data.map_checkpoints {
        w.f64s(params);
    }
    w.u64(data.reset_history.len() as u64);
    for (episode, map) in &data.reset_history {
        w.u64(*episode);
        w.u8(*map);
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointData> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let config_text = r.str()?;
    let episode = r.u64()?;
    let params = r.f64s()?;
    let opt_accumulator = r.f64s()?;
    let penalties_accumulate = r.u8()? != 0;
    let n_terms = r.len()?;
    let mut penalty_terms = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        penalty_terms.push(PenaltyTermData {
            fisher: r.f64s()?,
            fisher_episode: r.u64()?,
            fisher_samples: r.u64()?,
            anchor: r.f64s()?,
            anchor_episode: r.u64()?,
        });
    }
    let detector_recorded = r.u64()?;
    let detector_buffer = r.f64s()?;
    let reset_rng = r.rng()?;
    let fisher_rng = r.rng()?;
    let map_rng = r.rng()?;
    let n_policy = r.len()?;
    let mut policy_rngs = Vec::with_capacity(n_policy);
    for _ in 0..n_policy {
        policy_rngs.push(r.rng()?);
    }
    let n_log = r.len()?;
    let mut log = Vec::with_capacity(n_log);
    for _ in 0..n_log {
        log.push(LogRow {
            episode: r.u64()? as usize,
            map: r.u8()?,
            reward: r.f64()?,
            reward_short: r.f64()?,
            reward_long: r.f64()?,
            lambda: r.f64()?,
            policy_loss: r.f64()?,
            value_loss: r.f64()?,
            entropy: r.f64()?,
            param_hash: r.u64()?,
        });
    }
    let n_ckpt = r.len()?;
    let mut map_checkpoints = Vec::with_capacity(n_ckpt);
    for _ in 0..n_ckpt {
        map_checkpoints.push(r.f64s()?);
    }
    let n_hist = r.len()?;
    let mut reset_history = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        let episode = r.u64()?;
        let map = r.u8()?;
        reset_history.push((episode, map));
    }
    r.finish()?;
    Ok(CheckpointData {
        config_text,
        episode,
        params,
        opt_accumulator,
        penalties_accumulate,
        penalty_terms,
        detector_recorded,
        detector_buffer,
        reset_rng,
        fisher_rng,
        map_rng,
        policy_rngs,
        log,
        map_checkpoints,
        reset_history,
    })
}

/// Capture the trainer at its current episode boundary.
pub fn snapshot(trainer: &Trainer) -> CheckpointData {
    let (reset_rng, fisher_rng, map_rng) = trainer.stream_states();
    CheckpointData {
        config_text: config::cell_config_text(&trainer.cell),
        episode: trainer.episode as u64,
        params: trainer.params.data().to_vec(),
        opt_accumulator: trainer.opt.accumulator.clone(),
        penalties_accumulate: trainer.penalties.accumulates(),
        penalty_terms: trainer
            .penalties
            .terms()
            .iter()
            .map(|(f, a)| PenaltyTermData {
                fisher: f.values.clone(),
                fisher_episode: f.episode_index as u64,
                fisher_samples: f.sample_episodes as u64,
                anchor: a.params.clone(),
                anchor_episode: a.episode_index as u64,
            })
            .collect(),
        detector_recorded: trainer.detector.episodes_recorded as u64,
        detector_buffer: trainer.detector.buffer_contents(),
        reset_rng,
        fisher_rng,
        map_rng,
        policy_rngs: trainer.policy_rng_states(),
        log: trainer.log.clone(),
        map_checkpoints: trainer
            .map_checkpoints
            .iter()
            .map(|p| p.data().to_vec())
            .collect(),
        reset_history: trainer
            .reset_history
            .iter()
            .map(|&(e, m)| (e as u64, m))
            .collect(),
    }
}

/// Rebuild a trainer mid-run. The checkpoint must describe exactly the given
/// cell configuration.
pub fn resume(cell: CellConfig, data: &CheckpointData) -> Result<Trainer> {
    let expected = config::cell_config_text(&cell);
    if data.config_text != expected {
        return Err(Error::Format(
            "checkpoint was produced by a different cell configuration".into(),
        ));
    }
    let mut trainer = Trainer::new(cell)?;
    let net = trainer.network().clone();
    trainer.params = ParamVector::from_data(&net, data.params.clone())?;
    if data.opt_accumulator.len() != trainer.params.len() {
        return Err(Error::Format("optimizer state length mismatch".into()));
    }
    trainer.opt.accumulator = data.opt_accumulator.clone();
    let terms = data
        .penalty_terms
        .iter()
        .map(|t| {
            if t.fisher.len() != trainer.params.len() || t.anchor.len() != trainer.params.len() {
                return Err(Error::Format("penalty term length mismatch".into()));
            }
            Ok((
                crate::consolidation::FisherDiag {
                    values: t.fisher.clone(),
                    episode_index: t.fisher_episode as usize,
                    sample_episodes: t.fisher_samples as usize,
                },
                crate::consolidation::Anchor {
                    params: t.anchor.clone(),
                    episode_index: t.anchor_episode as usize,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    trainer.penalties =
        crate::consolidation::PenaltySet::from_terms(terms, data.penalties_accumulate);
    trainer.detector = crate::drift::DetectorState::restore(
        trainer.cell.hyper.window_short,
        trainer.cell.hyper.window_long,
        trainer.cell.hyper.eta,
        trainer.cell.hyper.alpha,
        data.detector_recorded as usize,
        data.detector_buffer.clone(),
    )?;
    trainer.restore_stream_states(&data.reset_rng, &data.fisher_rng, &data.map_rng);
    trainer.restore_policy_rngs(&data.policy_rngs)?;
    trainer.episode = data.episode as usize;
    trainer.log = data.log.clone();
    trainer.map_checkpoints = data
        .map_checkpoints
        .iter()
        .map(|p| ParamVector::from_data(&net, p.clone()))
        .collect::<Result<_>>()?;
    trainer.reset_history = data
        .reset_history
        .iter()
        .map(|&(e, m)| (e as usize, m))
        .collect();
    Ok(trainer)
}

/// Minimal parameter snapshot (per-map checkpoint files).
pub fn encode_params(net: &crate::nn::NetworkConfig, params: &[f64]) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(&PARAMS_MAGIC);
    w.u32(PARAMS_VERSION);
    w.u64(net.input_shape.0 as u64);
    w.u64(net.input_shape.1 as u64);
    w.u64(net.input_shape.2 as u64);
    w.u64(net.hidden_sizes.len() as u64);
    for h in &net.hidden_sizes {
        w.u64(*h as u64);
    }
    w.u64(net.n_actions as u64);
    w.f64s(params);
    w.buf
}

pub fn decode_params(bytes: &[u8]) -> Result<(crate::nn::NetworkConfig, Vec<f64>)> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != PARAMS_MAGIC {
        return Err(Error::Format("not a parameter snapshot file".into()));
    }
    let version = r.u32()?;
    if version != PARAMS_VERSION {
        return Err(Error::Format(format!(
            "unsupported parameter snapshot version {version}"
        )));
    }
    let input_shape = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
    let n_hidden = r.len()?;
    let hidden_sizes = (0..n_hidden)
        .map(|_| r.u64().map(|v| v as usize))
        .collect::<Result<_>>()?;
    let n_actions = r.u64()? as usize;
    let params = r.f64s()?;
    r.finish()?;
    let net = crate::nn::NetworkConfig {
        input_shape,
        hidden_sizes,
        n_actions,
    };
    Ok((net, params))
}
