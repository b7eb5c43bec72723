//! Evaluation protocols, the label-corruption and position ablations, and
//! the nearest-prototype reference classifier.

use crate::episodes::{
    bind_labels, build_2way_episode, build_zero_shot, corrupt_labels, episode_to_tokens, perturb_position,
    zero_shot_to_tokens, Episode, LabelSymbol, Vocab,
};
use crate::error::{config_err, Error, Result};
use crate::neighbors::NeighborTable;
use crate::net::{final_logits, Params, TokenSeq};
use crate::rng::StreamRng;
use crate::universe::{ClassId, ClassUniverse};
use crate::vecmath::{cosine, dot};

/// Sequences per forward call during evaluation.
const EVAL_CHUNK: usize = 64;

pub const DEFAULT_SHOTS: [usize; 8] = [2, 4, 6, 8, 10, 12, 14, 16];
pub const DEFAULT_FALSE_RATES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    /// Each holdout class against its most similar holdout class.
    HardPairs,
    /// Every ordered pair of distinct holdout classes.
    AllPairs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairProtocol {
    pub kind: PairKind,
    /// Maximum episodes per pair.
    pub budget: usize,
}

impl PairProtocol {
    pub fn hard(budget: usize) -> Self {
        PairProtocol { kind: PairKind::HardPairs, budget }
    }

    pub fn all(budget: usize) -> Self {
        PairProtocol { kind: PairKind::AllPairs, budget }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PairKind::HardPairs => "hard_pairs",
            PairKind::AllPairs => "all_pairs",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalEntry {
    pub protocol: String,
    pub shots: usize,
    pub condition: String,
    /// Candidate-restricted accuracy against the true symbol.
    pub accuracy: f64,
    pub stderr: f64,
    pub n: usize,
    /// Full-vocabulary argmax accuracy.
    pub full_vocab_accuracy: f64,
    /// Nearest-prototype accuracy on the same episodes, where defined.
    pub oracle_accuracy: Option<f64>,
}

impl EvalEntry {
    fn new(protocol: &str, shots: usize, condition: String, correct: usize, full_correct: usize, n: usize) -> Self {
        let accuracy = correct as f64 / n as f64;
        EvalEntry {
            protocol: protocol.to_string(),
            shots,
            condition,
            accuracy,
            stderr: stderr(accuracy, n),
            n,
            full_vocab_accuracy: full_correct as f64 / n as f64,
            oracle_accuracy: None,
        }
    }
}

pub fn stderr(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub experiment: String,
    pub seed: u64,
    pub entries: Vec<EvalEntry>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("protocol,shots,condition,accuracy,stderr,n\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{}\n",
                e.protocol, e.shots, e.condition, e.accuracy, e.stderr, e.n
            ));
        }
        out
    }

    pub fn find(&self, condition: &str) -> Option<&EvalEntry> {
        self.entries.iter().find(|e| e.condition == condition)
    }

    pub fn at_shots(&self, shots: usize) -> Option<&EvalEntry> {
        self.entries.iter().find(|e| e.shots == shots)
    }
}

/// Argmax restricted to `candidates` (token ids); ties go to the lower id.
pub fn restricted_argmax(logits: &[f64], candidates: &[u32]) -> u32 {
    let mut best: Option<(u32, f64)> = None;
    for &c in candidates {
        let v = logits[c as usize];
        best = match best {
            Some((bc, bv)) if bv > v || (bv == v && bc < c) => Some((bc, bv)),
            _ => Some((c, v)),
        };
    }
    best.expect("at least one candidate").0
}

/// Full-vocabulary argmax; ties go to the lower id.
pub fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

fn vocab_of(p: &Params) -> Vocab {
    Vocab { v_epi: p.cfg.v_epi, n_global: p.cfg.n_global() }
}

fn candidate_ids(e: &Episode, vocab: &Vocab) -> Result<[u32; 2]> {
    let [a, b] = e.candidates();
    Ok([vocab.token_id(a)?, vocab.token_id(b)?])
}

/// Prediction over the episode's two candidate symbols.
pub fn predict(p: &Params, e: &Episode) -> Result<LabelSymbol> {
    Ok(predict_batch(p, std::slice::from_ref(e))?[0].0)
}

/// Restricted and full-vocabulary predictions for each episode.
pub fn predict_batch(p: &Params, episodes: &[Episode]) -> Result<Vec<(LabelSymbol, LabelSymbol)>> {
    let vocab = vocab_of(p);
    let mut out = Vec::with_capacity(episodes.len());
    for chunk in episodes.chunks(EVAL_CHUNK) {
        let seqs = chunk
            .iter()
            .map(|e| episode_to_tokens(e, &vocab, p.cfg.max_seq, false))
            .collect::<Result<Vec<TokenSeq>>>()?;
        for (e, logits) in chunk.iter().zip(final_logits(p, &seqs)?) {
            let restricted = restricted_argmax(&logits, &candidate_ids(e, &vocab)?);
            out.push((vocab.symbol(restricted)?, vocab.symbol(argmax(&logits))?));
        }
    }
    Ok(out)
}

/// Groups support embeddings by their shown symbol and answers with the
/// symbol whose normalized group mean is most cosine-similar to the query.
pub fn oracle_nearest_prototype(e: &Episode) -> Result<LabelSymbol> {
    let mut cands = e.candidates();
    cands.sort();
    let dim = e.query_embedding.dim();
    let mut best: Option<(LabelSymbol, f64)> = None;
    for c in cands {
        let mut mean = vec![0.0; dim];
        let mut n = 0;
        for p in e.support.iter().filter(|p| p.symbol == c) {
            mean.iter_mut().zip(p.embedding.values()).for_each(|(m, x)| *m += x);
            n += 1;
        }
        if n == 0 {
            return Err(config_err(format!("candidate {c:?} has no support pairs")));
        }
        let score = cosine(&mean, e.query_embedding.values());
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((c, score));
        }
    }
    Ok(best.unwrap().0)
}

/// Ordered (positive, negative) holdout pairs of a protocol.
pub fn protocol_pairs(universe: &ClassUniverse, neighbors: &NeighborTable, kind: PairKind) -> Result<Vec<(ClassId, ClassId)>> {
    let holdout = universe.holdout_ids();
    if holdout.len() < 2 {
        return Err(config_err("evaluation needs at least 2 holdout classes"));
    }
    Ok(match kind {
        PairKind::HardPairs => holdout
            .iter()
            .map(|&c| {
                let first = neighbors
                    .get(c)?
                    .members
                    .first()
                    .ok_or_else(|| Error::Lookup(format!("class {c} has no neighbors")))?;
                Ok((c, first.class))
            })
            .collect::<Result<_>>()?,
        PairKind::AllPairs => holdout
            .iter()
            .flat_map(|&a| holdout.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
            .collect(),
    })
}

/// The `n` episodes of a protocol at `shots` shots. Episode `i` uses pair
/// `floor(i * P / n)` and its own random stream, so only the shot count
/// differs between calls with different `shots`.
pub fn protocol_episodes(
    universe: &ClassUniverse,
    neighbors: &NeighborTable,
    vocab: &Vocab,
    shots: usize,
    protocol: PairProtocol,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    if protocol.budget == 0 {
        return Err(config_err("pair protocol budget must be >= 1"));
    }
    let pairs = protocol_pairs(universe, neighbors, protocol.kind)?;
    let n = n_episodes.min(protocol.budget.saturating_mul(pairs.len()));
    let root = StreamRng::new(seed).derive("eval-episode", 0);
    (0..n)
        .map(|i| {
            let (pos, neg) = pairs[i * pairs.len() / n];
            let mut rng = root.derive("episode", i as u64);
            let binding = bind_labels(pos, neg, vocab.v_epi, &mut rng)?;
            build_2way_episode(universe, pos, neg, shots, binding, &mut rng)
        })
        .collect()
}

fn score(p: &Params, episodes: &[Episode], protocol: &str, shots: usize, condition: String) -> Result<EvalEntry> {
    if episodes.is_empty() {
        return Err(config_err("no evaluation episodes"));
    }
    let preds = predict_batch(p, episodes)?;
    let correct = preds.iter().zip(episodes).filter(|((r, _), e)| *r == e.true_symbol).count();
    let full = preds.iter().zip(episodes).filter(|((_, f), e)| *f == e.true_symbol).count();
    Ok(EvalEntry::new(protocol, shots, condition, correct, full, episodes.len()))
}

pub fn oracle_accuracy(episodes: &[Episode]) -> Result<f64> {
    let mut correct = 0;
    for e in episodes {
        correct += usize::from(oracle_nearest_prototype(e)? == e.true_symbol);
    }
    Ok(correct as f64 / episodes.len().max(1) as f64)
}

/// Accuracy at one shot count; `shots == 0` is the zero-shot task.
#[allow(clippy::too_many_arguments)]
pub fn eval_nshot(
    p: &Params,
    universe: &ClassUniverse,
    neighbors: &NeighborTable,
    shots: usize,
    protocol: PairProtocol,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalEntry> {
    if shots == 0 {
        return eval_zeroshot(p, universe, n_episodes, seed);
    }
    let episodes = protocol_episodes(universe, neighbors, &vocab_of(p), shots, protocol, n_episodes, seed)?;
    let mut entry = score(p, &episodes, protocol.name(), shots, "clean".into())?;
    entry.oracle_accuracy = Some(oracle_accuracy(&episodes)?);
    Ok(entry)
}

pub fn shot_sweep(
    p: &Params,
    universe: &ClassUniverse,
    neighbors: &NeighborTable,
    protocol: PairProtocol,
    shots: &[usize],
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let entries = shots
        .iter()
        .map(|&s| eval_nshot(p, universe, neighbors, s, protocol, n_episodes, seed))
        .collect::<Result<_>>()?;
    Ok(EvalReport { experiment: "shots".into(), seed, entries })
}

/// Accuracy against the true symbol with a growing fraction of swapped
/// support labels. Every rate corrupts the same underlying episodes.
#[allow(clippy::too_many_arguments)]
pub fn ablate_false_rate(
    p: &Params,
    universe: &ClassUniverse,
    neighbors: &NeighborTable,
    protocol: PairProtocol,
    shots: usize,
    rates: &[f64],
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let base = protocol_episodes(universe, neighbors, &vocab_of(p), shots, protocol, n_episodes, seed)?;
    let root = StreamRng::new(seed).derive("corrupt", 0);
    let mut entries = Vec::with_capacity(rates.len());
    for &rate in rates {
        let eps = base
            .iter()
            .enumerate()
            .map(|(i, e)| corrupt_labels(e, rate, &mut root.derive("episode", i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut entry = score(p, &eps, protocol.name(), shots, format!("false_rate={rate}"))?;
        entry.oracle_accuracy = Some(oracle_accuracy(&eps)?);
        entries.push(entry);
    }
    Ok(EvalReport { experiment: "false_rate".into(), seed, entries })
}

/// Baseline row followed by one row per single-position label flip.
pub fn ablate_position(
    p: &Params,
    universe: &ClassUniverse,
    neighbors: &NeighborTable,
    protocol: PairProtocol,
    shots: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let base = protocol_episodes(universe, neighbors, &vocab_of(p), shots, protocol, n_episodes, seed)?;
    let mut entries = vec![score(p, &base, protocol.name(), shots, "baseline".into())?];
    for k in 0..2 * shots {
        let eps = base.iter().map(|e| perturb_position(e, k)).collect::<Result<Vec<_>>>()?;
        entries.push(score(p, &eps, protocol.name(), shots, format!("position={k}"))?);
    }
    Ok(EvalReport { experiment: "position".into(), seed, entries })
}

/// No-support items over train classes, scored by full-vocabulary argmax
/// against the class's global symbol.
pub fn eval_zeroshot(p: &Params, universe: &ClassUniverse, n_episodes: usize, seed: u64) -> Result<EvalEntry> {
    let vocab = vocab_of(p);
    if vocab.n_global < universe.n_train() {
        return Err(config_err(format!(
            "model has {} global symbols but the universe has {} train classes",
            vocab.n_global,
            universe.n_train()
        )));
    }
    if n_episodes == 0 {
        return Err(config_err("no evaluation episodes"));
    }
    let root = StreamRng::new(seed).derive("eval-zeroshot", 0);
    let n_train = universe.n_train();
    let mut correct = 0;
    let mut oracle = 0;
    let ids: Vec<usize> = (0..n_episodes).collect();
    for chunk in ids.chunks(EVAL_CHUNK) {
        let items = chunk
            .iter()
            .map(|&i| {
                let class = ClassId((i % n_train) as u32);
                build_zero_shot(universe, class, &vocab, &mut root.derive("item", i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        let seqs = items.iter().map(|it| zero_shot_to_tokens(it, &vocab)).collect::<Result<Vec<_>>>()?;
        for (it, logits) in items.iter().zip(final_logits(p, &seqs)?) {
            correct += usize::from(vocab.symbol(argmax(&logits))? == it.symbol);
            let nearest = (0..n_train)
                .max_by(|&a, &b| {
                    let sa = dot(&universe.classes()[a].proto_img, it.embedding.values());
                    let sb = dot(&universe.classes()[b].proto_img, it.embedding.values());
                    sa.total_cmp(&sb).then(b.cmp(&a))
                })
                .unwrap();
            oracle += usize::from(nearest == it.class.index());
        }
    }
    let mut e = EvalEntry::new("zero_shot", 0, "clean".into(), correct, correct, n_episodes);
    e.oracle_accuracy = Some(oracle as f64 / n_episodes as f64);
    Ok(e)
}
