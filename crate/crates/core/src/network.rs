//! Architecture blocks assembled into the detector and denoiser models:
//! quaternion spatial transform, graph convolutional layer (four chained
//! local feature networks, two graph variants), residual-block heads.
//!
//! Model structure, shared by both stages:
//!
//! ```text
//! patch (m, 3)
//!   └─ QSTN: shared MLP → node max pool → MLP → quaternion → R
//!       └─ rotated coords (m, 3)
//!           └─ 4 × local feature network (edge features → shared
//!              linear+relu → neighbor max), outputs concatenated
//!               └─ shared linear+relu to the global width, node max pool
//!                   └─ linear+relu → residual block, twice
//!                       └─ detector: linear → sigmoid (probability)
//!                          denoiser: linear → tanh/√3 → ·R → ·scale
//! ```
//!
//! The Dynamic variant rebuilds the kNN graph in the current feature space
//! before every local feature network; FixedLowDim builds it once on the
//! rotated 3-D coordinates and reuses it throughout.

use crate::autodiff::{quat_rotation_entries, Data, Tape, TensorRef};
use crate::error::{Error, Result};
use crate::geometry::{Patch, Point3};
use crate::graph::{knn_graph, FeatureMatrix, NeighborGraph};
use std::collections::HashMap;
use std::sync::Arc;

/// Graph construction strategy of the convolutional layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphConvVariant {
    /// Rebuild the kNN graph in feature space before each local feature
    /// network ("ours1").
    Dynamic,
    /// Build the kNN graph once on the 3-D input coordinates and reuse it
    /// for all four local feature networks ("ours2").
    FixedLowDim,
}

impl GraphConvVariant {
    pub fn id(self) -> &'static str {
        match self {
            GraphConvVariant::Dynamic => "ours1",
            GraphConvVariant::FixedLowDim => "ours2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ours1" | "dynamic" => Ok(GraphConvVariant::Dynamic),
            "ours2" | "fixed" => Ok(GraphConvVariant::FixedLowDim),
            other => Err(Error::InvalidArgument(format!(
                "unknown graph-conv variant '{other}' (expected ours1 or ours2)"
            ))),
        }
    }
}

/// Which stage a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Detector,
    Denoiser,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Detector => "detector",
            ModelKind::Denoiser => "denoiser",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "detector" => Ok(ModelKind::Detector),
            "denoiser" => Ok(ModelKind::Denoiser),
            other => Err(Error::Checkpoint(format!("unknown model kind '{other}'"))),
        }
    }

    pub fn output_dim(self) -> usize {
        match self {
            ModelKind::Detector => 1,
            ModelKind::Denoiser => 3,
        }
    }

    /// The recorded default weight scheme for each stage.
    pub fn default_init(self) -> WeightInit {
        match self {
            ModelKind::Detector => WeightInit::He,
            ModelKind::Denoiser => WeightInit::Uniform {
                lo: -0.001,
                hi: 0.001,
            },
        }
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// Zero-mean normal, variance 2/fan_in.
    He,
    /// I.i.d. uniform in (lo, hi).
    Uniform { lo: f64, hi: f64 },
}

/// Full initialization recipe.
///
/// The desk recipe exists because fan-in-only schemes ignore the max
/// pooling stages: pooled activations inflate multiplicatively through the
/// head, the first SGD steps throw the output layer into saturation, and
/// the detector collapses onto the majority-constant predictor (the exact
/// minimizer of the L1 loss over constants). Zeroing the residual branches
/// and output head and rescaling the remaining head layers to unit RMS
/// keeps early updates inside the active region of the output
/// nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScheme {
    pub weights: WeightInit,
    /// Start the output layer at zero: the denoiser opens as the identity
    /// map and the detector opens at probability one-half.
    pub zero_output_head: bool,
    /// Start residual branches at zero so blocks open as identity.
    pub zero_residual_branches: bool,
    /// Rescale aggregation and head layers to unit activation RMS on
    /// reference patches before training (see
    /// [`calibrate_activation_scales`]).
    pub calibrate_scales: bool,
}

impl InitScheme {
    /// The paper-recorded scheme for each stage: He for the detector,
    /// uniform (−0.001, 0.001) for the denoiser, every tensor treated
    /// alike.
    pub fn paper_default(kind: ModelKind) -> Self {
        InitScheme {
            weights: kind.default_init(),
            zero_output_head: false,
            zero_residual_branches: false,
            calibrate_scales: false,
        }
    }

    /// Desk-scale scheme: He weights, identity-start residual blocks and
    /// output head, unit-RMS head calibration.
    pub fn desk_default(_kind: ModelKind) -> Self {
        InitScheme {
            weights: WeightInit::He,
            zero_output_head: true,
            zero_residual_branches: true,
            calibrate_scales: true,
        }
    }
}

/// Widths and neighbor count of one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub k: usize,
    pub variant: GraphConvVariant,
    pub local_widths: [usize; 4],
    pub global_width: usize,
    pub head_widths: [usize; 2],
    pub output_dim: usize,
}

impl ModelConfig {
    pub fn detector_default() -> Self {
        ModelConfig {
            k: 16,
            variant: GraphConvVariant::Dynamic,
            local_widths: [64, 64, 128, 256],
            global_width: 1024,
            head_widths: [512, 256],
            output_dim: 1,
        }
    }

    pub fn denoiser_default() -> Self {
        ModelConfig {
            output_dim: 3,
            ..Self::detector_default()
        }
    }

    /// A small configuration for fast training and tests; same topology.
    pub fn small(kind: ModelKind, variant: GraphConvVariant, k: usize) -> Self {
        ModelConfig {
            k,
            variant,
            local_widths: [16, 16, 32, 64],
            global_width: 128,
            head_widths: [64, 32],
            output_dim: kind.output_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if self.local_widths.iter().any(|&w| w < 1)
            || self.global_width < 1
            || self.head_widths.iter().any(|&w| w < 1)
            || self.output_dim < 1
        {
            return Err(Error::InvalidArgument("all widths must be >= 1".into()));
        }
        Ok(())
    }

    fn concat_width(&self) -> usize {
        self.local_widths.iter().sum()
    }

    /// QSTN widths derived from the trunk so small configs stay small:
    /// per-point MLP (w0, w1), post-pool layer w0, then 4 outputs.
    fn qstn_widths(&self) -> (usize, usize, usize) {
        (
            self.local_widths[0],
            self.local_widths[1],
            self.local_widths[0],
        )
    }

    /// (name, shape) of every parameter tensor, in canonical order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (q1, q2, q3) = self.qstn_widths();
        let mut layout: Vec<(String, Vec<usize>)> = vec![
            ("qstn.pp1.w".into(), vec![3, q1]),
            ("qstn.pp1.b".into(), vec![q1]),
            ("qstn.pp2.w".into(), vec![q1, q2]),
            ("qstn.pp2.b".into(), vec![q2]),
            ("qstn.fc1.w".into(), vec![q2, q3]),
            ("qstn.fc1.b".into(), vec![q3]),
            ("qstn.out.w".into(), vec![q3, 4]),
            ("qstn.out.b".into(), vec![4]),
        ];
        let mut c_in = 3;
        for (i, &w) in self.local_widths.iter().enumerate() {
            layout.push((format!("lfn{}.w", i + 1), vec![2 * c_in, w]));
            layout.push((format!("lfn{}.b", i + 1), vec![w]));
            c_in = w;
        }
        layout.push((
            "agg.w".into(),
            vec![self.concat_width(), self.global_width],
        ));
        layout.push(("agg.b".into(), vec![self.global_width]));
        let (h0, h1) = (self.head_widths[0], self.head_widths[1]);
        layout.push(("head1.w".into(), vec![self.global_width, h0]));
        layout.push(("head1.b".into(), vec![h0]));
        layout.push(("res1.fc1.w".into(), vec![h0, h0]));
        layout.push(("res1.fc1.b".into(), vec![h0]));
        layout.push(("res1.fc2.w".into(), vec![h0, h0]));
        layout.push(("res1.fc2.b".into(), vec![h0]));
        layout.push(("head2.w".into(), vec![h0, h1]));
        layout.push(("head2.b".into(), vec![h1]));
        layout.push(("res2.fc1.w".into(), vec![h1, h1]));
        layout.push(("res2.fc1.b".into(), vec![h1]));
        layout.push(("res2.fc2.w".into(), vec![h1, h1]));
        layout.push(("res2.fc2.b".into(), vec![h1]));
        layout.push(("out.w".into(), vec![h1, self.output_dim]));
        layout.push(("out.b".into(), vec![self.output_dim]));
        layout
    }
}

/// Named parameter tensors in canonical order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    entries: Vec<(String, Arc<Data>)>,
    by_name: HashMap<String, usize>,
}

impl ModelParams {
    pub fn from_entries(entries: Vec<(String, Arc<Data>)>) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(entries.len());
        for (i, (name, _)) in entries.iter().enumerate() {
            if by_name.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate parameter name '{name}'"
                )));
            }
        }
        Ok(ModelParams { entries, by_name })
    }

    /// Fresh parameters with each stage's paper-recorded scheme:
    /// He for the detector, uniform (−0.001, 0.001) for the denoiser.
    pub fn init(cfg: &ModelConfig, kind: ModelKind, seed: u64) -> Result<Self> {
        Self::init_with(cfg, InitScheme::paper_default(kind), seed)
    }

    /// Fresh parameters under an explicit scheme. Biases start at zero
    /// except the quaternion head bias, which starts at the identity
    /// quaternion; the quaternion head weights are scaled down so the
    /// initial rotation is the identity to ~1e-10.
    pub fn init_with(cfg: &ModelConfig, scheme: InitScheme, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut entries = Vec::new();
        for (i, (name, shape)) in cfg.param_layout().into_iter().enumerate() {
            let tensor_seed = derive_seed(seed, i as u64);
            let is_bias = name.ends_with(".b");
            let zeroed = (scheme.zero_output_head && name == "out.w")
                || (scheme.zero_residual_branches
                    && (name == "res1.fc2.w" || name == "res2.fc2.w"));
            let mut data = if is_bias || zeroed {
                Data::zeros(shape)
            } else {
                match scheme.weights {
                    WeightInit::He => crate::autodiff::init_he(shape, tensor_seed)?,
                    WeightInit::Uniform { lo, hi } => {
                        crate::autodiff::init_uniform(shape, lo, hi, tensor_seed)?
                    }
                }
            };
            if name == "qstn.out.w" {
                for v in data.vals_mut() {
                    *v *= 1e-12;
                }
            }
            if name == "qstn.out.b" {
                data.vals_mut()[0] = 1.0;
            }
            entries.push((name, Arc::new(data)));
        }
        Self::from_entries(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Arc<Data>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Data>> {
        self.by_name.get(name).map(|&i| &self.entries[i].1)
    }

    /// Replaces one tensor by name (test and ablation helper).
    pub fn set(&mut self, name: &str, data: Data) -> Result<()> {
        match self.by_name.get(name) {
            Some(&i) => {
                if self.entries[i].1.shape() != data.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter '{name}': {:?} vs {:?}",
                        self.entries[i].1.shape(),
                        data.shape()
                    )));
                }
                self.entries[i].1 = Arc::new(data);
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!(
                "no parameter named '{name}'"
            ))),
        }
    }

    /// Checks every tensor against the layout implied by `cfg`.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let layout = cfg.param_layout();
        if layout.len() != self.entries.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter count {} does not match config ({} expected)",
                self.entries.len(),
                layout.len()
            )));
        }
        for ((name, shape), (got_name, got)) in layout.iter().zip(&self.entries) {
            if name != got_name || got.shape() != &shape[..] {
                return Err(Error::ShapeMismatch(format!(
                    "parameter '{got_name}' {:?} does not match layout '{name}' {shape:?}",
                    got.shape()
                )));
            }
        }
        Ok(())
    }

    /// One SGD step: w ← w − lr·g, gradients aligned with entry order.
    pub fn sgd_step(&mut self, grads: &[Data], lr: f64) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(Error::LengthMismatch {
                what: "gradients vs parameters",
                expected: self.entries.len(),
                got: grads.len(),
            });
        }
        for ((_, p), g) in self.entries.iter_mut().zip(grads) {
            let pv = Arc::make_mut(p);
            for (w, gi) in pv.vals_mut().iter_mut().zip(g.vals()) {
                *w -= lr * gi;
            }
        }
        Ok(())
    }
}

/// Cheap deterministic per-tensor seed derivation (splitmix64 step).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Model parameters bound onto a tape as shared leaves, in entry order.
pub struct BoundParams {
    refs: Vec<TensorRef>,
    by_name: HashMap<String, usize>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let refs = params
            .entries()
            .iter()
            .map(|(_, data)| tape.leaf_shared(data.clone(), true))
            .collect();
        BoundParams {
            refs,
            by_name: params.by_name.clone(),
        }
    }

    pub fn get(&self, name: &str) -> TensorRef {
        self.refs[*self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))]
    }

    /// Gradients in entry order (zeros where a parameter was unused).
    pub fn grads(&self, tape: &Tape) -> Vec<Data> {
        self.refs
            .iter()
            .map(|&r| match tape.grad(r) {
                Some(g) => g.clone(),
                None => Data::zeros(tape.value(r).shape().to_vec()),
            })
            .collect()
    }
}

/// Standard unit-quaternion (w, x, y, z) to rotation matrix. The input is
/// normalized first; a zero quaternion is an error.
pub fn quaternion_to_rotation(q: [f64; 4]) -> Result<[[f64; 3]; 3]> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidArgument(
            "cannot build a rotation from the zero quaternion".into(),
        ));
    }
    let qn: Vec<f64> = q.iter().map(|v| v / norm).collect();
    let e = quat_rotation_entries(&qn);
    Ok([[e[0], e[1], e[2]], [e[3], e[4], e[5]], [e[6], e[7], e[8]]])
}

/// The patch coordinates as a (m, 3) non-gradient leaf.
pub fn patch_coords_leaf(tape: &mut Tape, patch: &Patch) -> TensorRef {
    let vals: Vec<f64> = patch.points.iter().flat_map(|p| p.to_array()).collect();
    tape.leaf(
        Data::new(vec![patch.len(), 3], vals).expect("patch coordinate shape"),
        false,
    )
}

/// Predicts a quaternion from the patch, rotates the patch by the induced
/// matrix, and returns (rotated coords, R). R is kept for the inverse
/// application on the denoiser output.
pub fn qstn_forward(
    tape: &mut Tape,
    coords: TensorRef,
    bound: &BoundParams,
) -> Result<(TensorRef, TensorRef)> {
    let h = tape.linear(coords, bound.get("qstn.pp1.w"), bound.get("qstn.pp1.b"))?;
    let h = tape.relu(h);
    let h = tape.linear(h, bound.get("qstn.pp2.w"), bound.get("qstn.pp2.b"))?;
    let h = tape.relu(h);
    let pooled = tape.max_over_nodes(h)?;
    let h = tape.linear(pooled, bound.get("qstn.fc1.w"), bound.get("qstn.fc1.b"))?;
    let h = tape.relu(h);
    let q_raw = tape.linear(h, bound.get("qstn.out.w"), bound.get("qstn.out.b"))?;
    let q = tape.normalize_quat(q_raw)?;
    let rot = tape.quat_to_rot(q)?;
    let rotated = tape.matmul_t(coords, rot)?;
    Ok((rotated, rot))
}

/// Graphs and per-stage outputs of one graph convolutional layer pass.
pub struct GraphConvTrace {
    pub graphs: Vec<Arc<NeighborGraph>>,
    pub stage_outputs: Vec<TensorRef>,
}

fn feature_matrix_of(tape: &Tape, x: TensorRef) -> Result<FeatureMatrix> {
    let v = tape.value(x);
    let (n, c) = (v.shape()[0], v.shape()[1]);
    FeatureMatrix::new(n, c, v.vals().to_vec())
}

/// Runs the four local feature networks in sequence and returns their
/// concatenated per-node outputs. Graph handling per the variant: Dynamic
/// rebuilds on current features before every network, FixedLowDim reuses
/// the coordinate-space graph. No gradient flows through graph selection.
pub fn graph_conv_layer(
    tape: &mut Tape,
    coords: TensorRef,
    cfg: &ModelConfig,
    bound: &BoundParams,
) -> Result<(TensorRef, GraphConvTrace)> {
    let n = tape.value(coords).shape()[0];
    if n <= cfg.k {
        return Err(Error::InvalidArgument(format!(
            "graph conv needs more than k = {} nodes, got {n}",
            cfg.k
        )));
    }
    let mut trace = GraphConvTrace {
        graphs: Vec::with_capacity(4),
        stage_outputs: Vec::with_capacity(4),
    };
    let mut current = coords;
    let mut fixed_graph: Option<Arc<NeighborGraph>> = None;
    for i in 0..4 {
        let graph = match cfg.variant {
            GraphConvVariant::Dynamic => {
                Arc::new(knn_graph(&feature_matrix_of(tape, current)?, cfg.k)?)
            }
            GraphConvVariant::FixedLowDim => match &fixed_graph {
                Some(g) => g.clone(),
                None => {
                    let g = Arc::new(knn_graph(&feature_matrix_of(tape, coords)?, cfg.k)?);
                    fixed_graph = Some(g.clone());
                    g
                }
            },
        };
        trace.graphs.push(graph.clone());
        let e = tape.edge_features(current, graph)?;
        let name = format!("lfn{}", i + 1);
        let h = tape.linear(
            e,
            bound.get(&format!("{name}.w")),
            bound.get(&format!("{name}.b")),
        )?;
        let h = tape.relu(h);
        current = tape.max_over_neighbors(h)?;
        trace.stage_outputs.push(current);
    }
    let concat = tape.concat_cols(&trace.stage_outputs)?;
    Ok((concat, trace))
}

/// y = x + F(x) with F = linear → relu → linear; input and output widths
/// must agree.
pub fn residual_block(
    tape: &mut Tape,
    x: TensorRef,
    w1: TensorRef,
    b1: TensorRef,
    w2: TensorRef,
    b2: TensorRef,
) -> Result<TensorRef> {
    let in_width = tape.value(x).shape().last().copied().unwrap_or(0);
    let out_width = tape.value(w2).shape()[1];
    if in_width != out_width {
        return Err(Error::ShapeMismatch(format!(
            "residual block widths differ: input {in_width}, output {out_width}"
        )));
    }
    let h = tape.linear(x, w1, b1)?;
    let h = tape.relu(h);
    let f = tape.linear(h, w2, b2)?;
    tape.add(x, f)
}

/// Activation tap points through the head (used by scale calibration).
pub struct HeadTaps {
    pub global: TensorRef,
    pub head1: TensorRef,
    pub head2: TensorRef,
}

/// Shared trunk: QSTN, graph conv layer, global descriptor, head with two
/// residual blocks. Returns the head output (1, output_dim), the rotation,
/// and the graph trace.
pub fn trunk_forward(
    tape: &mut Tape,
    patch: &Patch,
    cfg: &ModelConfig,
    bound: &BoundParams,
) -> Result<(TensorRef, TensorRef, GraphConvTrace)> {
    let (out, rot, trace, _) = trunk_forward_tapped(tape, patch, cfg, bound)?;
    Ok((out, rot, trace))
}

/// [`trunk_forward`] with the head activations exposed.
pub fn trunk_forward_tapped(
    tape: &mut Tape,
    patch: &Patch,
    cfg: &ModelConfig,
    bound: &BoundParams,
) -> Result<(TensorRef, TensorRef, GraphConvTrace, HeadTaps)> {
    cfg.validate()?;
    let coords = patch_coords_leaf(tape, patch);
    let (rotated, rot) = qstn_forward(tape, coords, bound)?;
    let (features, trace) = graph_conv_layer(tape, rotated, cfg, bound)?;
    let g = tape.linear(features, bound.get("agg.w"), bound.get("agg.b"))?;
    let g = tape.relu(g);
    let global = tape.max_over_nodes(g)?;

    let h = tape.linear(global, bound.get("head1.w"), bound.get("head1.b"))?;
    let h = tape.relu(h);
    let h = residual_block(
        tape,
        h,
        bound.get("res1.fc1.w"),
        bound.get("res1.fc1.b"),
        bound.get("res1.fc2.w"),
        bound.get("res1.fc2.b"),
    )?;
    let head1 = h;
    let h = tape.linear(h, bound.get("head2.w"), bound.get("head2.b"))?;
    let h = tape.relu(h);
    let h = residual_block(
        tape,
        h,
        bound.get("res2.fc1.w"),
        bound.get("res2.fc1.b"),
        bound.get("res2.fc2.w"),
        bound.get("res2.fc2.b"),
    )?;
    let head2 = h;
    let out = tape.linear(h, bound.get("out.w"), bound.get("out.b"))?;
    Ok((
        out,
        rot,
        trace,
        HeadTaps {
            global,
            head1,
            head2,
        },
    ))
}

/// Rescales the aggregation and head layers so their activations have unit
/// RMS averaged over the reference patches. Deterministic; a few forward
/// passes per layer.
pub fn calibrate_activation_scales(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    reference_patches: &[&Patch],
) -> Result<()> {
    if reference_patches.is_empty() {
        return Err(Error::InvalidArgument(
            "scale calibration needs at least one reference patch".into(),
        ));
    }
    let groups: [(usize, [&str; 2]); 3] = [
        (0, ["agg.w", "agg.b"]),
        (1, ["head1.w", "head1.b"]),
        (2, ["head2.w", "head2.b"]),
    ];
    for (tap_index, names) in groups {
        for _ in 0..8 {
            let mut sq_sum = 0.0;
            let mut count = 0usize;
            for patch in reference_patches {
                let mut tape = Tape::new();
                let bound = BoundParams::bind(&mut tape, params);
                let (_, _, _, taps) = trunk_forward_tapped(&mut tape, patch, cfg, &bound)?;
                let tap = match tap_index {
                    0 => taps.global,
                    1 => taps.head1,
                    _ => taps.head2,
                };
                let vals = tape.value(tap).vals();
                sq_sum += vals.iter().map(|v| v * v).sum::<f64>();
                count += vals.len();
            }
            let rms = (sq_sum / count as f64).sqrt();
            if !(rms > 0.0) {
                break; // dead layer; nothing to normalize
            }
            if (rms - 1.0).abs() < 0.05 {
                break;
            }
            let factor = 1.0 / rms;
            for name in names {
                let mut scaled = (**params.get(name).expect("layout name")).clone();
                for v in scaled.vals_mut() {
                    *v *= factor;
                }
                params.set(name, scaled)?;
            }
        }
    }
    Ok(())
}

/// Outlier probability of the patch center, in [0, 1].
pub fn detector_forward(
    tape: &mut Tape,
    patch: &Patch,
    cfg: &ModelConfig,
    bound: &BoundParams,
) -> Result<TensorRef> {
    if cfg.output_dim != 1 {
        return Err(Error::InvalidArgument(
            "detector config must have output_dim = 1".into(),
        ));
    }
    let (out, _, _) = trunk_forward(tape, patch, cfg, bound)?;
    Ok(tape.sigmoid(out))
}

/// World-frame displacement for the patch center. The raw head output
/// lives in the QSTN-rotated normalized frame; it is bounded by tanh,
/// scaled into the unit ball, rotated back, and multiplied by the patch
/// scale, so ‖displacement‖ ≤ patch radius.
pub fn denoiser_forward(
    tape: &mut Tape,
    patch: &Patch,
    cfg: &ModelConfig,
    bound: &BoundParams,
) -> Result<TensorRef> {
    if cfg.output_dim != 3 {
        return Err(Error::InvalidArgument(
            "denoiser config must have output_dim = 3".into(),
        ));
    }
    let (out, rot, _) = trunk_forward(tape, patch, cfg, bound)?;
    let bounded = tape.tanh(out);
    let unit = tape.scale(bounded, 1.0 / 3f64.sqrt());
    let back = tape.matmul(unit, rot)?;
    Ok(tape.scale(back, patch.scale))
}

/// Inference-only probability (fresh private tape).
pub fn detector_probability(patch: &Patch, cfg: &ModelConfig, params: &ModelParams) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let prob = detector_forward(&mut tape, patch, cfg, &bound)?;
    Ok(tape.value(prob).item())
}

/// Inference-only displacement in world units (fresh private tape).
pub fn denoiser_displacement(
    patch: &Patch,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<Point3> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let disp = denoiser_forward(&mut tape, patch, cfg, &bound)?;
    let v = tape.value(disp).vals();
    Ok(Point3::new(v[0], v[1], v[2]))
}
