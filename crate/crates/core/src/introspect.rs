//! Looking inside trained networks: frozen rollouts that record first-layer
//! hidden activations, per-action grouping, k-means over activation patterns,
//! and weight images written as binary PGM.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::env::{EnvAction, EnvConfig, EnvError};
use crate::nn::{forward, LayerParams, NetworkParams, NnError};
use crate::pg::select_action;
use crate::seed::{derive_seed, STREAM_ENV, STREAM_SAMPLING};
use crate::task::{PongTask, Task};

#[derive(Debug, Error)]
pub enum IntrospectError {
    #[error("{0}")]
    Usage(String),
    #[error("unsupported architecture: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a binary PGM ({reason})")]
    BadPgm { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IntrospectError + '_ {
    move |source| IntrospectError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub step: usize,
    /// First hidden layer, post-activation.
    pub hidden: Vec<f32>,
    pub action: EnvAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RolloutPolicy {
    /// Sample from the renormalised policy output, as during play.
    #[default]
    Sampled,
    /// Always take the highest-scoring action.
    Greedy,
}

/// Plays Pong with frozen `params` for exactly `steps` environment steps,
/// starting new episodes as needed.
pub fn record_rollout(
    params: &NetworkParams<f32>,
    env_config: &EnvConfig,
    steps: usize,
    seed: u64,
    policy: RolloutPolicy,
) -> Result<Vec<ActivationRecord>, IntrospectError> {
    let mut task = PongTask::new(env_config.clone())?;
    let arch = params.arch();
    if arch.input_len() != task.input_len() || arch.output_len() != EnvAction::COUNT {
        return Err(IntrospectError::Unsupported(format!(
            "`{arch}` does not fit a {}×{} board with {} actions",
            env_config.frame_height,
            env_config.frame_width,
            EnvAction::COUNT
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SAMPLING, 0));
    let mut records = Vec::with_capacity(steps);
    let mut episode = 0u64;
    let mut input = Vec::new();
    let mut need_reset = true;
    for step in 0..steps {
        if need_reset {
            input = task.reset(derive_seed(seed, STREAM_ENV, episode))?;
            episode += 1;
        }
        let trace = forward(params, &input)?;
        let action = match policy {
            RolloutPolicy::Sampled => select_action(trace.output(), 0.0, &mut rng).0,
            RolloutPolicy::Greedy => argmax(trace.output()),
        };
        let action = EnvAction::from_index(action)?;
        records.push(ActivationRecord { step, hidden: trace.first_hidden().to_vec(), action });
        let result = task.step(action.index())?;
        input = result.input;
        need_reset = result.done;
    }
    Ok(records)
}

fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Record indices split by the action taken, in [`EnvAction::ALL`] order.
pub fn group_by_action(records: &[ActivationRecord]) -> [Vec<usize>; 3] {
    let mut groups: [Vec<usize>; 3] = Default::default();
    for (i, r) in records.iter().enumerate() {
        groups[r.action.index()].push(i);
    }
    groups
}

/// Assigns each hidden node to the action whose steps give it the highest
/// mean activation. Actions never taken are skipped; ties go to the first
/// action in [`EnvAction::ALL`] order.
pub fn assign_nodes_to_actions(records: &[ActivationRecord]) -> Vec<EnvAction> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let width = first.hidden.len();
    let mut sums = [vec![0.0f64; width], vec![0.0; width], vec![0.0; width]];
    let mut counts = [0usize; 3];
    for r in records {
        let a = r.action.index();
        counts[a] += 1;
        for (s, h) in sums[a].iter_mut().zip(&r.hidden) {
            *s += f64::from(*h);
        }
    }
    (0..width)
        .map(|j| {
            let mut best: Option<(usize, f64)> = None;
            for a in 0..3 {
                if counts[a] == 0 {
                    continue;
                }
                let mean = sums[a][j] / counts[a] as f64;
                if best.is_none_or(|(_, m)| mean > m) {
                    best = Some((a, mean));
                }
            }
            EnvAction::ALL[best.map_or(0, |(a, _)| a)]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves further than this (Euclidean).
    pub tol: f64,
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, seed, max_iters: 300, tol: 1e-6, restarts: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn cluster_inertia(&self, vectors: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.centroids.len()];
        for (v, &a) in vectors.iter().zip(&self.assignments) {
            out[a] += sq_dist(v, &self.centroids[a]);
        }
        out
    }
}

/// True when no entry exceeds its predecessor beyond rounding noise.
pub fn is_monotone_nonincreasing(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(v: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(v, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// D²-weighted draw; zero-weight vectors are never picked.
fn draw_weighted(d2: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = d2.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &d) in d2.iter().enumerate() {
        if d > 0.0 && u < d {
            return i;
        }
        u -= d;
    }
    d2.iter().rposition(|&d| d > 0.0).expect("k distinct vectors")
}

/// Greedy k-means++: each new seed is the best of `2 + ln k` D²-weighted
/// candidates, judged by the potential it leaves.
fn plus_plus_seeds(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let trials = 2 + (k as f64).ln() as usize;
    let mut centroids = vec![vectors[rng.random_range(0..vectors.len())].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = draw_weighted(&d2, rng);
            let next: Vec<f64> = d2.iter().zip(vectors).map(|(&d, v)| d.min(sq_dist(v, &vectors[pick]))).collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, pick, next));
            }
        }
        let (_, pick, next) = best.expect("at least one trial");
        centroids.push(vectors[pick].clone());
        d2 = next;
    }
    centroids
}

fn lloyd(vectors: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize, tol: f64) -> KMeansResult {
    let dim = vectors[0].len();
    let k = centroids.len();
    let mut assignments = vec![0; vectors.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut inertia = 0.0;
        for (a, v) in assignments.iter_mut().zip(vectors) {
            let (i, d) = nearest(v, &centroids);
            *a = i;
            inertia += d;
        }
        history.push(inertia);
        debug_assert!(is_monotone_nonincreasing(&history), "Lloyd step increased inertia: {history:?}");
        if iterations == max_iters {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &a) in vectors.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut shift = 0.0f64;
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            // an empty cluster keeps its centroid
            if n == 0 {
                continue;
            }
            let mean: Vec<f64> = s.iter().map(|x| x / n as f64).collect();
            shift = shift.max(sq_dist(c, &mean).sqrt());
            *c = mean;
        }
        if shift < tol {
            // one final assignment against the settled centroids
            let mut inertia = 0.0;
            for (a, v) in assignments.iter_mut().zip(vectors) {
                let (i, d) = nearest(v, &centroids);
                *a = i;
                inertia += d;
            }
            history.push(inertia);
            debug_assert!(is_monotone_nonincreasing(&history), "Lloyd step increased inertia: {history:?}");
            break;
        }
    }
    let inertia = *history.last().expect("at least one assignment");
    KMeansResult { centroids, assignments, inertia, iterations, inertia_history: history }
}

fn distinct_count(vectors: &[Vec<f64>]) -> usize {
    vectors
        .iter()
        .map(|v| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

/// k-means++ seeding followed by Lloyd iterations; best of `restarts` runs.
pub fn kmeans(vectors: &[Vec<f64>], config: &KMeansConfig) -> Result<KMeansResult, IntrospectError> {
    if config.k == 0 {
        return Err(IntrospectError::Usage("k must be at least 1".into()));
    }
    if vectors.is_empty() {
        return Err(IntrospectError::Usage("no vectors to cluster".into()));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(IntrospectError::Usage("vectors differ in length".into()));
    }
    let distinct = distinct_count(vectors);
    let k = if distinct < config.k {
        log::warn!("only {distinct} distinct vectors; reducing k from {} to {distinct}", config.k);
        distinct
    } else {
        config.k
    };
    let mut best: Option<KMeansResult> = None;
    for restart in 0..config.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0, restart as u64));
        let seeds = plus_plus_seeds(vectors, k, &mut rng);
        let result = lloyd(vectors, seeds, config.max_iters, config.tol);
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupClusters {
    pub action: EnvAction,
    /// Indices into the record list.
    pub members: Vec<usize>,
    /// `None` for an empty group.
    pub clusters: Option<KMeansResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub groups: Vec<GroupClusters>,
}

impl ClusterReport {
    /// One JSON object per cluster: `group`, `cluster`, `size`, `inertia`.
    pub fn json_lines(&self, records: &[ActivationRecord]) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let Some(result) = &g.clusters else {
                out.push_str(&json!({"group": g.action.name(), "cluster": null, "size": 0, "inertia": 0.0}).to_string());
                out.push('\n');
                continue;
            };
            let vectors = group_vectors(records, &g.members);
            let inertia = result.cluster_inertia(&vectors);
            for (c, size) in result.cluster_sizes().into_iter().enumerate() {
                let line = json!({"group": g.action.name(), "cluster": c, "size": size, "inertia": inertia[c]});
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
        out
    }
}

fn group_vectors(records: &[ActivationRecord], members: &[usize]) -> Vec<Vec<f64>> {
    members.iter().map(|&i| records[i].hidden.iter().map(|&h| f64::from(h)).collect()).collect()
}

/// Groups records by action and runs k-means within every nonempty group.
pub fn cluster_activations(records: &[ActivationRecord], k: usize, seed: u64) -> Result<ClusterReport, IntrospectError> {
    let groups = group_by_action(records);
    let mut out = Vec::with_capacity(3);
    for (a, members) in groups.into_iter().enumerate() {
        let clusters = if members.is_empty() {
            log::warn!("no steps took action {}", EnvAction::ALL[a].name());
            None
        } else {
            let config = KMeansConfig::new(k, derive_seed(seed, 10, a as u64));
            Some(kmeans(&group_vectors(records, &members), &config)?)
        };
        out.push(GroupClusters { action: EnvAction::ALL[a], members, clusters });
    }
    Ok(ClusterReport { groups: out })
}

/// Grey-scale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightImage {
    pub node_index: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl WeightImage {
    /// Min-max normalises `values` onto a `height × width` grid. A constant
    /// input maps to 0.5 everywhere.
    pub fn normalized(node_index: usize, height: usize, width: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), height * width, "image size");
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let pixels = if range > 0.0 && range.is_finite() {
            values.iter().map(|v| (v - lo) / range).collect()
        } else {
            vec![0.5; values.len()]
        };
        Self { node_index, height, width, pixels }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// Incoming weights of each selected first-layer node, reshaped to the board.
pub fn render_weight_images(params: &NetworkParams<f32>, node_indices: &[usize]) -> Result<Vec<WeightImage>, IntrospectError> {
    let (height, width) = params.arch().input_dims();
    match &params.layers()[0] {
        LayerParams::Conv { .. } => Err(IntrospectError::Unsupported(
            "first layer is convolutional; render its kernels instead".into(),
        )),
        LayerParams::Dense { inputs, outputs, weights, .. } => node_indices
            .iter()
            .map(|&j| {
                if j >= *outputs {
                    return Err(IntrospectError::Usage(format!("node {j} out of range (layer has {outputs})")));
                }
                let column: Vec<f64> = (0..*inputs).map(|i| f64::from(weights[i * outputs + j])).collect();
                Ok(WeightImage::normalized(j, height, width, &column))
            })
            .collect(),
    }
}

/// Each kernel of a convolutional first layer as one image; input channels
/// are stacked vertically.
pub fn render_conv_kernels(params: &NetworkParams<f32>) -> Result<Vec<WeightImage>, IntrospectError> {
    let LayerParams::Conv { geometry: g, kernels, .. } = &params.layers()[0] else {
        return Err(IntrospectError::Unsupported("first layer is dense".into()));
    };
    let (kh, kw, ch) = (g.kernel_height, g.kernel_width, g.in_channels);
    Ok((0..g.out_channels)
        .map(|o| {
            let mut values = Vec::with_capacity(ch * kh * kw);
            for c in 0..ch {
                for r in 0..kh {
                    for col in 0..kw {
                        values.push(f64::from(kernels[((o * kh + r) * kw + col) * ch + c]));
                    }
                }
            }
            WeightImage::normalized(o, ch * kh, kw, &values)
        })
        .collect())
}

/// Near-square `rows × cols` grid for `n` values with `rows ≥ cols`, e.g.
/// 200 → 20×10.
pub fn hidden_grid(n: usize) -> (usize, usize) {
    let cols = (1..=n).filter(|c| c * c <= n && n % c == 0).max().unwrap_or(1);
    (n / cols, cols)
}

/// A centroid (or any hidden-layer vector) as an image on [`hidden_grid`].
pub fn render_vector(index: usize, values: &[f64]) -> WeightImage {
    let (h, w) = hidden_grid(values.len());
    WeightImage::normalized(index, h, w, values)
}

/// Tiles equally sized images `cols` per row with a one-pixel black border.
pub fn atlas(images: &[WeightImage], cols: usize) -> Option<WeightImage> {
    let first = images.first()?;
    let (h, w) = (first.height, first.width);
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let (ah, aw) = (rows * (h + 1) + 1, cols * (w + 1) + 1);
    let mut pixels = vec![0.0; ah * aw];
    for (n, img) in images.iter().enumerate() {
        if img.height != h || img.width != w {
            return None;
        }
        let (r0, c0) = ((n / cols) * (h + 1) + 1, (n % cols) * (w + 1) + 1);
        for r in 0..h {
            pixels[(r0 + r) * aw + c0..(r0 + r) * aw + c0 + w].copy_from_slice(&img.pixels[r * w..(r + 1) * w]);
        }
    }
    Some(WeightImage { node_index: 0, height: ah, width: aw, pixels })
}

/// Binary PGM, maxval 255, each intensity quantised as `floor(v·255 + 0.5)`.
pub fn write_pgm(image: &WeightImage, path: &Path) -> Result<(), IntrospectError> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend(image.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8));
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

pub fn read_pgm(path: &Path) -> Result<WeightImage, IntrospectError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |reason: &str| IntrospectError::BadPgm { path: path.to_path_buf(), reason: reason.into() };
    // header: magic, width, height, maxval separated by whitespace, then one
    // whitespace byte before the raster
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("magic is not P5"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be 1..=255"));
    }
    let raster = bytes.get(pos..pos + width * height).ok_or_else(|| bad("truncated raster"))?;
    let pixels = raster.iter().map(|&b| f64::from(b) / maxval as f64).collect();
    Ok(WeightImage { node_index: 0, height, width, pixels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandReport {
    /// Pixels in the largest 8-connected component of the top decile.
    pub component_size: usize,
    pub row_span: usize,
    pub col_span: usize,
    /// Principal-axis angle of that component, degrees from horizontal.
    pub angle_deg: f64,
    pub is_diagonal_band: bool,
}

/// Looks for a connected, elongated, diagonal streak among the brightest 10%
/// of pixels.
pub fn detect_diagonal_band(image: &WeightImage) -> BandReport {
    let (h, w) = (image.height, image.width);
    let mut sorted = image.pixels.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted[(sorted.len() * 9 / 10).min(sorted.len() - 1)];
    let hot: Vec<bool> = image.pixels.iter().map(|&v| v >= cut && v > sorted[0]).collect();
    let mut seen = vec![false; h * w];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..h * w {
        if !hot[start] || seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut i = 0;
        while i < comp.len() {
            let (r, c) = (comp[i] / w, comp[i] % w);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let n = nr as usize * w + nc as usize;
                    if hot[n] && !seen[n] {
                        seen[n] = true;
                        comp.push(n);
                    }
                }
            }
            i += 1;
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    if best.is_empty() {
        return BandReport { component_size: 0, row_span: 0, col_span: 0, angle_deg: 0.0, is_diagonal_band: false };
    }
    let n = best.len() as f64;
    let rows: Vec<f64> = best.iter().map(|&p| (p / w) as f64).collect();
    let cols: Vec<f64> = best.iter().map(|&p| (p % w) as f64).collect();
    let (mr, mc) = (rows.iter().sum::<f64>() / n, cols.iter().sum::<f64>() / n);
    let (mut srr, mut scc, mut src) = (0.0, 0.0, 0.0);
    for (r, c) in rows.iter().zip(&cols) {
        srr += (r - mr) * (r - mr);
        scc += (c - mc) * (c - mc);
        src += (r - mr) * (c - mc);
    }
    let angle_deg = (0.5 * (2.0 * src).atan2(scc - srr)).to_degrees();
    let span = |v: &[f64]| (v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min)) as usize + 1;
    let (row_span, col_span) = (span(&rows), span(&cols));
    let elongated = row_span >= h / 4 && col_span >= w / 4;
    let tilted = (20.0..=70.0).contains(&angle_deg.abs());
    BandReport { component_size: best.len(), row_span, col_span, angle_deg, is_diagonal_band: elongated && tilted }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntrospectOptions {
    pub steps: usize,
    pub seed: u64,
    pub k: usize,
    pub policy: RolloutPolicy,
    /// Nodes to render; `None` renders every first-layer node.
    pub nodes: Option<Vec<usize>>,
}

impl Default for IntrospectOptions {
    fn default() -> Self {
        Self { steps: 50_000, seed: 0, k: 5, policy: RolloutPolicy::Sampled, nodes: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntrospectSummary {
    pub records: usize,
    pub group_sizes: [usize; 3],
    pub node_actions: Vec<EnvAction>,
    pub bands: Vec<(usize, BandReport)>,
    pub files: Vec<PathBuf>,
}

/// Full pipeline: rollout, clustering, images and report files under `out`.
pub fn run_introspection(
    params: &NetworkParams<f32>,
    env_config: &EnvConfig,
    options: &IntrospectOptions,
    out: &Path,
) -> Result<IntrospectSummary, IntrospectError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let records = record_rollout(params, env_config, options.steps, options.seed, options.policy)?;
    if records.is_empty() {
        return Err(IntrospectError::Usage("rollout produced no steps".into()));
    }
    let report = cluster_activations(&records, options.k, options.seed)?;
    let mut files = Vec::new();
    let save = |img: &WeightImage, name: String, files: &mut Vec<PathBuf>| -> Result<(), IntrospectError> {
        let path = out.join(name);
        write_pgm(img, &path)?;
        files.push(path);
        Ok(())
    };

    let report_path = out.join("clusters.jsonl");
    fs::write(&report_path, report.json_lines(&records)).map_err(io_err(&report_path))?;
    files.push(report_path);

    let mut centroid_images = Vec::new();
    for g in &report.groups {
        if let Some(result) = &g.clusters {
            for (c, centroid) in result.centroids.iter().enumerate() {
                let img = render_vector(c, centroid);
                save(&img, format!("centroid_{}_{c}.pgm", g.action.name()), &mut files)?;
                centroid_images.push(img);
            }
        }
    }
    if let Some(a) = atlas(&centroid_images, options.k) {
        save(&a, "atlas_centroids.pgm".into(), &mut files)?;
    }

    let node_actions = assign_nodes_to_actions(&records);
    let code = |a: &EnvAction| a.index() as f64 / 2.0;
    let values: Vec<f64> = node_actions.iter().map(code).collect();
    let (gh, gw) = hidden_grid(values.len());
    let grouping = WeightImage { node_index: 0, height: gh, width: gw, pixels: values };
    save(&grouping, "node_actions.pgm".into(), &mut files)?;

    let images = match &params.layers()[0] {
        LayerParams::Dense { outputs, .. } => {
            let nodes: Vec<usize> = options.nodes.clone().unwrap_or_else(|| (0..*outputs).collect());
            render_weight_images(params, &nodes)?
        }
        LayerParams::Conv { .. } => render_conv_kernels(params)?,
    };
    let mut bands = Vec::new();
    for img in &images {
        save(img, format!("node_{}.pgm", img.node_index), &mut files)?;
        bands.push((img.node_index, detect_diagonal_band(img)));
    }
    if let Some(a) = atlas(&images, 8) {
        save(&a, "atlas_nodes.pgm".into(), &mut files)?;
    }

    let groups = group_by_action(&records);
    Ok(IntrospectSummary {
        records: records.len(),
        group_sizes: [groups[0].len(), groups[1].len(), groups[2].len()],
        node_actions,
        bands,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, ArchitectureSpec};

    fn record(action: EnvAction, hidden: Vec<f32>) -> ActivationRecord {
        ActivationRecord { step: 0, hidden, action }
    }

    #[test]
    fn rollout_lengths_and_frozen_weights() {
        let arch = ArchitectureSpec::parse("400:16:3").unwrap();
        let params = init_params::<f32>(&arch, 3);
        let before = params.clone();
        let cfg = EnvConfig::mini();
        assert!(record_rollout(&params, &cfg, 0, 1, RolloutPolicy::Sampled).unwrap().is_empty());
        let recs = record_rollout(&params, &cfg, 700, 1, RolloutPolicy::Greedy).unwrap();
        assert_eq!(recs.len(), 700);
        assert!(recs.iter().all(|r| r.hidden.len() == 16));
        assert_eq!(recs.iter().map(|r| r.step).collect::<Vec<_>>(), (0..700).collect::<Vec<_>>());
        assert_eq!(params, before);

        let wrong = init_params::<f32>(&ArchitectureSpec::parse("6400:16:3").unwrap(), 3);
        assert!(matches!(record_rollout(&wrong, &cfg, 5, 1, RolloutPolicy::Sampled), Err(IntrospectError::Unsupported(_))));
    }

    #[test]
    fn grouping_partitions_records() {
        let recs: Vec<_> = (0..5).map(|i| record(EnvAction::Still, vec![i as f32])).collect();
        let g = group_by_action(&recs);
        assert_eq!([g[0].len(), g[1].len(), g[2].len()], [5, 0, 0]);

        let mixed: Vec<_> = (0..9).map(|i| record(EnvAction::ALL[i % 3], vec![i as f32])).collect();
        let g = group_by_action(&mixed);
        let mut all: Vec<usize> = g.concat();
        all.sort();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn nodes_go_to_their_most_active_action() {
        let recs = vec![
            record(EnvAction::Up, vec![1.0, 0.0]),
            record(EnvAction::Down, vec![0.0, 2.0]),
            record(EnvAction::Down, vec![0.0, 1.0]),
        ];
        assert_eq!(assign_nodes_to_actions(&recs), vec![EnvAction::Up, EnvAction::Down]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let v = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let r = kmeans(&v, &KMeansConfig::new(1, 0)).unwrap();
        assert!((r.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((r.centroids[0][1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut v = Vec::new();
        for centre in [(-5.0, -5.0), (5.0, 5.0)] {
            for _ in 0..200 {
                v.push(vec![centre.0 + rng.random_range(-1.0..1.0), centre.1 + rng.random_range(-1.0..1.0)]);
            }
        }
        let means: Vec<Vec<f64>> = [&v[..200], &v[200..]]
            .iter()
            .map(|blob| (0..2).map(|d| blob.iter().map(|p| p[d]).sum::<f64>() / 200.0).collect())
            .collect();
        let r = kmeans(&v, &KMeansConfig::new(2, 1)).unwrap();
        for m in &means {
            assert!(r.centroids.iter().any(|c| sq_dist(c, m).sqrt() < 0.01), "{:?} vs {m:?}", r.centroids);
        }
        assert!(is_monotone_nonincreasing(&r.inertia_history));
    }

    #[test]
    fn kmeans_is_deterministic_and_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
        assert_eq!(kmeans(&v, &KMeansConfig::new(4, 9)).unwrap(), kmeans(&v, &KMeansConfig::new(4, 9)).unwrap());
        assert!(matches!(kmeans(&v, &KMeansConfig::new(0, 9)), Err(IntrospectError::Usage(_))));
        // two distinct points cannot support three clusters
        let dup = vec![vec![0.0], vec![0.0], vec![1.0]];
        assert_eq!(kmeans(&dup, &KMeansConfig::new(3, 0)).unwrap().centroids.len(), 2);
    }

    #[test]
    fn constant_column_renders_mid_grey() {
        let img = WeightImage::normalized(0, 2, 2, &[3.0; 4]);
        assert_eq!(img.pixels, vec![0.5; 4]);
    }

    #[test]
    fn weight_images_preserve_argmax() {
        let arch = ArchitectureSpec::parse("20x20:8:3").unwrap();
        let params = init_params::<f32>(&arch, 4);
        let imgs = render_weight_images(&params, &[0, 5]).unwrap();
        let LayerParams::Dense { outputs, weights, .. } = &params.layers()[0] else { unreachable!() };
        for img in imgs {
            assert_eq!((img.height, img.width), (20, 20));
            let column: Vec<f32> = (0..400).map(|i| weights[i * outputs + img.node_index]).collect();
            let wmax = (0..400).max_by(|&a, &b| column[a].total_cmp(&column[b])).unwrap();
            assert_eq!(img.pixels[wmax], 1.0);
        }
        let conv = init_params::<f32>(&ArchitectureSpec::parse("20x20:conv(4,5x5,s2):3").unwrap(), 1);
        assert!(matches!(render_weight_images(&conv, &[0]), Err(IntrospectError::Unsupported(_))));
        let kernels = render_conv_kernels(&conv).unwrap();
        assert_eq!(kernels.len(), 4);
        assert_eq!((kernels[0].height, kernels[0].width), (5, 5));
    }

    #[test]
    fn untrained_weights_look_gaussian() {
        let arch = ArchitectureSpec::parse("6400:4:3").unwrap();
        let img = &render_weight_images(&init_params::<f32>(&arch, 11), &[2]).unwrap()[0];
        let n = img.pixels.len() as f64;
        let mean = img.pixels.iter().sum::<f64>() / n;
        let var = img.pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        let skew = img.pixels.iter().map(|p| (p - mean).powi(3)).sum::<f64>() / n / var.powf(1.5);
        assert!(skew.abs() < 0.2, "skew {skew}");
        assert!(!detect_diagonal_band(img).is_diagonal_band);
    }

    #[test]
    fn band_detector_finds_a_diagonal() {
        let mut values = vec![0.0; 400];
        for i in 0..20 {
            values[i * 20 + i] = 1.0;
            if i + 1 < 20 {
                values[i * 20 + i + 1] = 1.0;
            }
        }
        let report = detect_diagonal_band(&WeightImage::normalized(0, 20, 20, &values));
        assert!(report.is_diagonal_band, "{report:?}");
        let mut flat = vec![0.0; 400];
        flat[200..240].iter_mut().for_each(|v| *v = 1.0);
        assert!(!detect_diagonal_band(&WeightImage::normalized(0, 20, 20, &flat)).is_diagonal_band);
    }

    #[test]
    fn pgm_bytes_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = WeightImage { node_index: 0, height: 2, width: 2, pixels: vec![0.0, 1.0, 0.5, 0.5] };
        write_pgm(&img, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..], b"P5\n2 2\n255\n\x00\xff\x80\x80");

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let big = WeightImage { node_index: 0, height: 80, width: 80, pixels: (0..6400).map(|_| rng.random()).collect() };
        write_pgm(&big, &path).unwrap();
        assert!(fs::read(&path).unwrap().starts_with(b"P5\n80 80\n255\n"));
        let back = read_pgm(&path).unwrap();
        let worst = big.pixels.iter().zip(&back.pixels).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1.0 / 255.0);
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(hidden_grid(200), (20, 10));
        assert_eq!(hidden_grid(64), (8, 8));
        assert_eq!(hidden_grid(7), (7, 1));
    }
}
