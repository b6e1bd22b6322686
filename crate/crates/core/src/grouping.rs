//! Thresholded user-correlation graph and partitioning of users into
//! low-correlation groups via greedy graph coloring.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use crate::channel::ChannelTensor;
use crate::error::{Error, Result};

/// Symmetric boolean adjacency over users; an edge means the pair correlates
/// above the threshold and must not share a group.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationGraph {
    num_users: usize,
    threshold: f64,
    adj: Vec<bool>,
}

impl CorrelationGraph {
    /// Builds a graph from an explicit pairwise correlation lookup.
    /// Edges use a strict comparison: `c > threshold`.
    pub fn from_correlations<F>(num_users: usize, threshold: f64, mut corr: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Result<f64>,
    {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidThreshold(threshold));
        }
        let mut adj = vec![false; num_users * num_users];
        for i in 0..num_users {
            for j in (i + 1)..num_users {
                if corr(i, j)? > threshold {
                    adj[i * num_users + j] = true;
                    adj[j * num_users + i] = true;
                }
            }
        }
        Ok(Self {
            num_users,
            threshold,
            adj,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    #[inline]
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.num_users + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i * self.num_users..(i + 1) * self.num_users]
            .iter()
            .filter(|&&e| e)
            .count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_users).map(|i| self.degree(i)).max().unwrap_or(0)
    }
}

/// Builds the correlation graph of all users on one `(b, t)`.
pub fn build_correlation_graph(
    tensor: &ChannelTensor,
    b: usize,
    t: usize,
    threshold: f64,
) -> Result<CorrelationGraph> {
    CorrelationGraph::from_correlations(tensor.num_users(), threshold, |i, j| {
        tensor.correlation(b, t, i, j)
    })
}

/// Like [`build_correlation_graph`], but thresholds the correlation averaged
/// across all RBs at TTI `t`.
pub fn build_correlation_graph_rb_avg(
    tensor: &ChannelTensor,
    t: usize,
    threshold: f64,
) -> Result<CorrelationGraph> {
    let nb = tensor.num_rbs() as f64;
    CorrelationGraph::from_correlations(tensor.num_users(), threshold, |i, j| {
        let mut acc = 0.0;
        for b in 0..tensor.num_rbs() {
            acc += tensor.correlation(b, t, i, j)?;
        }
        Ok(acc / nb)
    })
}

/// Which channel region a grouping was computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupingStamp {
    /// TTIs for which the grouping is served, `[start, end)`.
    pub tti_range: (usize, usize),
    /// RB the graph was built on, or `None` when averaged over all RBs.
    pub rb: Option<usize>,
}

/// Partition of the user set into low-correlation groups.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGrouping {
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
    pub stamp: Option<GroupingStamp>,
}

impl UserGrouping {
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    #[inline]
    pub fn group_of(&self, user: usize) -> usize {
        self.group_of[user]
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.groups[group]
    }

    /// `user_id,group_id` rows for debugging dumps.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "user_id,group_id")?;
        for (user, group) in self.group_of.iter().enumerate() {
            writeln!(out, "{user},{group}")?;
        }
        Ok(())
    }
}

/// Greedy coloring in Welsh-Powell order: vertices by descending degree,
/// ties by ascending index, each taking the smallest color absent from its
/// colored neighbors. Deterministic; never uses more than max_degree + 1
/// colors.
pub fn color_graph(graph: &CorrelationGraph) -> UserGrouping {
    let n = graph.num_users();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| graph.degree(b).cmp(&graph.degree(a)).then(a.cmp(&b)));

    let mut color = vec![usize::MAX; n];
    let mut num_colors = 0;
    let mut used = Vec::new();
    for &v in &order {
        used.clear();
        used.resize(num_colors + 1, false);
        for u in 0..n {
            if graph.adjacent(v, u) && color[u] != usize::MAX {
                used[color[u]] = true;
            }
        }
        let c = used.iter().position(|&taken| !taken).unwrap();
        color[v] = c;
        num_colors = num_colors.max(c + 1);
    }

    let mut groups = vec![Vec::new(); num_colors];
    for v in 0..n {
        groups[color[v]].push(v);
    }
    UserGrouping {
        groups,
        group_of: color,
        stamp: None,
    }
}

/// What channel scope a cached grouping covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingScope {
    /// Fresh graph per (RB, refresh epoch).
    PerRb,
    /// One graph per refresh epoch from RB-averaged correlations.
    PerTti,
    /// Computed once, at the first TTI requested.
    Once,
}

/// Caching grouping source: recomputes from the current channel every
/// `update_period` TTIs and serves the cached partition in between. Safe for
/// concurrent readers; refreshes are serialized behind the write lock.
pub struct GroupingProvider {
    threshold: f64,
    update_period: usize,
    scope: GroupingScope,
    cache: RwLock<HashMap<(usize, usize), Arc<UserGrouping>>>,
    computations: AtomicUsize,
}

impl GroupingProvider {
    pub fn new(threshold: f64, update_period: usize, scope: GroupingScope) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidThreshold(threshold));
        }
        if update_period == 0 {
            return Err(Error::InvalidConfig("update_period must be >= 1".into()));
        }
        Ok(Self {
            threshold,
            update_period,
            scope,
            cache: RwLock::new(HashMap::new()),
            computations: AtomicUsize::new(0),
        })
    }

    /// Number of graph+coloring computations performed so far.
    pub fn computations(&self) -> usize {
        self.computations.load(Ordering::Relaxed)
    }

    fn key(&self, b: usize, t: usize) -> (usize, usize) {
        match self.scope {
            GroupingScope::PerRb => (t / self.update_period, b),
            GroupingScope::PerTti => (t / self.update_period, 0),
            GroupingScope::Once => (0, 0),
        }
    }

    /// Grouping valid for `(b, t)`, recomputed at epoch boundaries.
    pub fn get(&self, tensor: &ChannelTensor, b: usize, t: usize) -> Result<Arc<UserGrouping>> {
        let key = self.key(b, t);
        if let Some(hit) = self.cache.read().expect("grouping cache poisoned").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let mut cache = self.cache.write().expect("grouping cache poisoned");
        if let Some(hit) = cache.get(&key) {
            return Ok(Arc::clone(hit));
        }
        let epoch_start = key.0 * self.update_period;
        let refresh_tti = match self.scope {
            GroupingScope::Once => t,
            _ => epoch_start,
        };
        let graph = match self.scope {
            GroupingScope::PerRb => build_correlation_graph(tensor, b, refresh_tti, self.threshold)?,
            _ => build_correlation_graph_rb_avg(tensor, refresh_tti, self.threshold)?,
        };
        let mut grouping = color_graph(&graph);
        grouping.stamp = Some(GroupingStamp {
            tti_range: match self.scope {
                GroupingScope::Once => (refresh_tti, usize::MAX),
                _ => (epoch_start, epoch_start + self.update_period),
            },
            rb: match self.scope {
                GroupingScope::PerRb => Some(b),
                _ => None,
            },
        });
        let grouping = Arc::new(grouping);
        cache.insert(key, Arc::clone(&grouping));
        self.computations.fetch_add(1, Ordering::Relaxed);
        Ok(grouping)
    }

    /// Computes every grouping TTI `t` will need, so later `get` calls are
    /// cache hits. Lets callers keep refresh work out of timed regions.
    pub fn prewarm(&self, tensor: &ChannelTensor, t: usize) -> Result<()> {
        match self.scope {
            GroupingScope::PerRb => {
                for b in 0..tensor.num_rbs() {
                    self.get(tensor, b, t)?;
                }
            }
            _ => {
                self.get(tensor, 0, t)?;
            }
        }
        Ok(())
    }
}
