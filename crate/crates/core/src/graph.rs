//! Spatio-temporal graphs over the (time, channel) samples of a window.
//!
//! Every sample is a node. Same-channel neighbours in time are joined by
//! temporal edges; at every time step, channels are joined to their k nearest
//! montage neighbours by spatial edges. Structure depends only on the window
//! shape, the montage and `k`, so one [`GraphTopology`] is built per
//! experiment and shared by all windows.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::signal::FoldedWindow;

/// Number of per-node input features: `[p, Δp, t/T, i/C]`.
pub const NODE_FEATURES: usize = 4;
/// Default number of spatial neighbours per channel.
pub const DEFAULT_K: usize = 3;

const EMOTIV_EPOC_MONTAGE: &str = include_str!("../data/emotiv_epoc14.montage");

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("k = {k} must lie in 1..={max} for a {channels}-channel montage", max = channels.saturating_sub(1))]
    KTooLarge { k: usize, channels: usize },
    #[error("window has {window} channels but the montage has {montage}")]
    ChannelMismatch { window: usize, montage: usize },
    #[error("invalid montage: {0}")]
    BadMontage(String),
    #[error("montage line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("edge ({0}, {1}) is a self-loop or out of range")]
    BadEdge(usize, usize),
    #[error("window needs at least 2 time steps, got {0}")]
    TooShort(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Electrode names and their 2-D scalp coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Montage<T> {
    names: Vec<String>,
    coords: Array2<T>,
}

impl<T: Scalar> Montage<T> {
    pub fn new(names: Vec<String>, coords: Array2<T>) -> Result<Self, GraphError> {
        let c = names.len();
        if c < 2 {
            return Err(GraphError::BadMontage(format!("need at least 2 channels, got {c}")));
        }
        if coords.dim() != (c, 2) {
            return Err(GraphError::BadMontage(format!(
                "coordinates have shape {:?}, expected ({c}, 2)",
                coords.dim()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::BadMontage("non-finite coordinate".into()));
        }
        for i in 0..c {
            for j in i + 1..c {
                if coords.row(i) == coords.row(j) {
                    return Err(GraphError::BadMontage(format!(
                        "channels {} and {} share a position",
                        names[i], names[j]
                    )));
                }
            }
        }
        Ok(Self { names, coords })
    }

    /// Parses `name x y` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut names = Vec::new();
        let mut flat = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(GraphError::Parse {
                    line: n + 1,
                    message: format!("expected `name x y`, found {} fields", fields.len()),
                });
            }
            for f in &fields[1..] {
                let v: f64 = f.parse().map_err(|_| GraphError::Parse {
                    line: n + 1,
                    message: format!("`{f}` is not a number"),
                })?;
                flat.push(T::lit(v));
            }
            names.push(fields[0].to_string());
        }
        let c = names.len();
        let coords = Array2::from_shape_vec((c, 2), flat).expect("two coordinates per channel");
        Self::new(names, coords)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Projected positions of the 14 channels of the headset used for the
    /// reference recordings (AF3, F7, F3, FC5, T7, P7, O1, O2, P8, T8, FC6,
    /// F4, F8, AF4).
    pub fn emotiv_epoc() -> Self {
        Self::parse(EMOTIV_EPOC_MONTAGE).expect("bundled montage is valid")
    }

    /// Channels on a line at `x = 0, 1, 2, ...`; handy for tests and for
    /// synthetic data with a non-standard channel count.
    pub fn linear(channels: usize) -> Result<Self, GraphError> {
        let names = (0..channels).map(|i| format!("ch{}", i + 1)).collect();
        let coords = Array2::from_shape_fn((channels, 2), |(i, j)| {
            if j == 0 {
                T::from_usize(i).unwrap()
            } else {
                T::zero()
            }
        });
        Self::new(names, coords)
    }

    /// The headset montage for 14 channels, a line otherwise.
    pub fn for_channels(channels: usize) -> Result<Self, GraphError> {
        if channels == 14 {
            Ok(Self::emotiv_epoc())
        } else {
            Self::linear(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn coords(&self) -> &Array2<T> {
        &self.coords
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, row) in self.names.iter().zip(self.coords.rows()) {
            out.push_str(&format!("{name} {} {}\n", row[0], row[1]));
        }
        out
    }
}

/// Undirected k-nearest-neighbour channel pairs, 0-based with `i < j`,
/// sorted. Ties in distance go to the lower channel index.
pub fn knn_spatial<T: Scalar>(montage: &Montage<T>, k: usize) -> Result<Vec<(usize, usize)>, GraphError> {
    let c = montage.channels();
    if k == 0 || k >= c {
        return Err(GraphError::KTooLarge { k, channels: c });
    }
    let xy = montage.coords();
    let mut pairs = BTreeSet::new();
    for i in 0..c {
        let mut others: Vec<(T, usize)> = (0..c)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = xy[[i, 0]] - xy[[j, 0]];
                let dy = xy[[i, 1]] - xy[[j, 1]];
                ((dx * dx + dy * dy).sqrt(), j)
            })
            .collect();
        others.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    Ok(pairs.into_iter().collect())
}

/// Row-compressed lists indexed by node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    pub fn row(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Directed messages for attention: every undirected edge in both
/// directions plus one self-loop per node, grouped by destination.
///
/// Within the group of destination `u` the first message is the self-loop.
#[derive(Debug, Clone)]
pub struct MessageIndex {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// `offsets[u]..offsets[u + 1]` are the messages arriving at `u`.
    pub offsets: Arc<[usize]>,
}

impl MessageIndex {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Edge structure shared by every window of one experiment.
#[derive(Debug, Clone)]
pub struct GraphTopology {
    num_nodes: usize,
    shape: Option<(usize, usize)>,
    edges: Vec<(usize, usize)>,
    temporal_edges: usize,
    spatial_edges: usize,
    neighbors: Csr,
    messages: MessageIndex,
}

impl GraphTopology {
    /// Temporal chains per channel plus the given channel pairs at every time step.
    pub fn spatio_temporal(
        t_len: usize,
        channels: usize,
        spatial_pairs: &[(usize, usize)],
    ) -> Result<Self, GraphError> {
        let mut edges = Vec::with_capacity(channels * t_len.saturating_sub(1) + t_len * spatial_pairs.len());
        for t in 0..t_len.saturating_sub(1) {
            for i in 0..channels {
                edges.push((node_index(t, i, channels), node_index(t + 1, i, channels)));
            }
        }
        let temporal = edges.len();
        for t in 0..t_len {
            for &(i, j) in spatial_pairs {
                if i >= channels || j >= channels {
                    return Err(GraphError::BadEdge(i, j));
                }
                edges.push((node_index(t, i, channels), node_index(t, j, channels)));
            }
        }
        let mut topo = Self::from_edges(t_len * channels, edges)?;
        topo.shape = Some((t_len, channels));
        topo.temporal_edges = temporal;
        topo.spatial_edges = topo.edges.len() - temporal;
        Ok(topo)
    }

    /// Arbitrary undirected graph; duplicate edges are merged.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut seen = BTreeSet::new();
        let mut list = Vec::new();
        for (u, v) in edges {
            if u == v || u >= num_nodes || v >= num_nodes {
                return Err(GraphError::BadEdge(u, v));
            }
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                list.push(key);
            }
        }
        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in &list {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..num_nodes].to_vec();
        let mut targets = vec![0usize; offsets[num_nodes]];
        for &(u, v) in &list {
            targets[fill[u]] = v;
            fill[u] += 1;
            targets[fill[v]] = u;
            fill[v] += 1;
        }
        for u in 0..num_nodes {
            targets[offsets[u]..offsets[u + 1]].sort_unstable();
        }
        let neighbors = Csr { offsets, targets };

        let total = num_nodes + 2 * list.len();
        let mut src = Vec::with_capacity(total);
        let mut dst = Vec::with_capacity(total);
        let mut moffsets = Vec::with_capacity(num_nodes + 1);
        moffsets.push(0);
        for u in 0..num_nodes {
            src.push(u);
            dst.push(u);
            for &v in neighbors.row(u) {
                src.push(v);
                dst.push(u);
            }
            moffsets.push(src.len());
        }
        let messages = MessageIndex {
            src: src.into(),
            dst: dst.into(),
            offsets: moffsets.into(),
        };
        let n_edges = list.len();
        Ok(Self {
            num_nodes,
            shape: None,
            edges: list,
            temporal_edges: 0,
            spatial_edges: n_edges,
            neighbors,
            messages,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// `(T, C)` when built by [`GraphTopology::spatio_temporal`].
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.shape
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn temporal_edges(&self) -> usize {
        self.temporal_edges
    }

    pub fn spatial_edges(&self) -> usize {
        self.spatial_edges
    }

    pub fn neighbors(&self) -> &Csr {
        &self.neighbors
    }

    pub fn messages(&self) -> &MessageIndex {
        &self.messages
    }
}

impl fmt::Display for GraphTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} nodes, {} edges ({} temporal, {} spatial)",
            self.num_nodes,
            self.num_edges(),
            self.temporal_edges,
            self.spatial_edges
        )
    }
}

/// Row of node `(t, i)` with 0-based time `t` and channel `i`; the 1-based
/// form is `(t−1)·C + (i−1)`.
#[inline]
pub fn node_index(t: usize, channel: usize, channels: usize) -> usize {
    t * channels + channel
}

/// `[p, Δp, t/T, i/C]` per node, with 1-based `t, i` and `Δp = 0` at `t = 1`.
pub fn node_features<T: Scalar>(folded: &FoldedWindow<T>) -> Result<Array2<T>, GraphError> {
    let (t_len, channels) = folded.p().dim();
    if t_len < 2 {
        return Err(GraphError::TooShort(t_len));
    }
    let p = folded.p();
    let tt = T::from_usize(t_len).unwrap();
    let cc = T::from_usize(channels).unwrap();
    let mut f = Array2::zeros((t_len * channels, NODE_FEATURES));
    for t in 0..t_len {
        for i in 0..channels {
            let mut row = f.row_mut(node_index(t, i, channels));
            row[0] = p[[t, i]];
            row[1] = if t == 0 { T::zero() } else { p[[t, i]] - p[[t - 1, i]] };
            row[2] = T::from_usize(t + 1).unwrap() / tt;
            row[3] = T::from_usize(i + 1).unwrap() / cc;
        }
    }
    Ok(f)
}

/// A window's graph: shared structure plus its node features.
#[derive(Debug, Clone)]
pub struct WindowGraph<T> {
    topology: Arc<GraphTopology>,
    features: Array2<T>,
}

impl<T: Scalar> WindowGraph<T> {
    /// Attaches features of `folded` to a prebuilt topology.
    pub fn with_topology(folded: &FoldedWindow<T>, topology: Arc<GraphTopology>) -> Result<Self, GraphError> {
        let (t_len, channels) = folded.p().dim();
        if let Some((tt, cc)) = topology.shape() {
            if cc != channels {
                return Err(GraphError::ChannelMismatch {
                    window: channels,
                    montage: cc,
                });
            }
            if tt != t_len {
                return Err(GraphError::BadMontage(format!(
                    "topology built for {tt} time steps, window has {t_len}"
                )));
            }
        }
        if topology.num_nodes() != t_len * channels {
            return Err(GraphError::BadMontage("node count differs from window size".into()));
        }
        Ok(Self {
            topology,
            features: node_features(folded)?,
        })
    }

    /// Node features `[p, Δp, t/T, i/C]` with an explicit topology, used for
    /// graphs that are not laid out on a `(T, C)` grid.
    pub fn from_parts(topology: Arc<GraphTopology>, features: Array2<T>) -> Result<Self, GraphError> {
        if features.dim() != (topology.num_nodes(), NODE_FEATURES) {
            return Err(GraphError::BadMontage(format!(
                "features have shape {:?}, expected ({}, {NODE_FEATURES})",
                features.dim(),
                topology.num_nodes()
            )));
        }
        Ok(Self { topology, features })
    }

    pub fn topology(&self) -> &GraphTopology {
        &self.topology
    }

    pub fn shared_topology(&self) -> Arc<GraphTopology> {
        Arc::clone(&self.topology)
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn num_nodes(&self) -> usize {
        self.topology.num_nodes()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        self.topology.edges()
    }
}

/// Builds the topology for one `(T, C, montage, k)` configuration.
pub fn build_topology<T: Scalar>(
    t_len: usize,
    montage: &Montage<T>,
    k: usize,
) -> Result<Arc<GraphTopology>, GraphError> {
    let pairs = knn_spatial(montage, k)?;
    Ok(Arc::new(GraphTopology::spatio_temporal(
        t_len,
        montage.channels(),
        &pairs,
    )?))
}

pub fn build_graph<T: Scalar>(
    folded: &FoldedWindow<T>,
    montage: &Montage<T>,
    k: usize,
) -> Result<WindowGraph<T>, GraphError> {
    if folded.channels() != montage.channels() {
        return Err(GraphError::ChannelMismatch {
            window: folded.channels(),
            montage: montage.channels(),
        });
    }
    let topology = build_topology(folded.len(), montage, k)?;
    WindowGraph::with_topology(folded, topology)
}
