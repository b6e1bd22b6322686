//! Channel coefficients per (RB, TTI), from trace files or a clustered
//! synthetic generator, plus the gain / inter-user-correlation primitives
//! the schedulers are built on.
//!
//! The tensor is logically indexed `(b, t, m, k)`: RB, TTI, antenna, user.
//! Synthetic channels are flat across RBs (and across TTIs when static), so
//! the storage uses per-dimension strides and a stride of zero for broadcast
//! dimensions. Accessors hide this entirely.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const TRACE_MAGIC: &[u8; 4] = b"MMCH";
const TRACE_VERSION: u32 = 1;
const TRACE_HEADER_LEN: usize = 32;

/// Complex channel coefficients for `num_antennas x num_users` links over a
/// grid of `num_rbs x num_ttis` resources. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ChannelTensor {
    num_antennas: usize,
    num_users: usize,
    num_rbs: usize,
    num_ttis: usize,
    rb_stride: usize,
    tti_stride: usize,
    data: Vec<Complex64>,
}

impl ChannelTensor {
    /// Builds a fully materialized tensor from coefficients in `(b, t, m, k)`
    /// row-major order.
    pub fn from_coefficients(
        num_antennas: usize,
        num_users: usize,
        num_rbs: usize,
        num_ttis: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if num_antennas == 0 || num_users == 0 || num_rbs == 0 || num_ttis == 0 {
            return Err(Error::InvalidClusterSpec(
                "tensor dimensions must be positive".into(),
            ));
        }
        let expected = num_rbs * num_ttis * num_antennas * num_users;
        if data.len() != expected {
            return Err(Error::IndexOutOfRange(format!(
                "coefficient count {} does not match dimensions ({} expected)",
                data.len(),
                expected
            )));
        }
        check_finite(&data)?;
        let plane = num_antennas * num_users;
        Ok(Self {
            num_antennas,
            num_users,
            num_rbs,
            num_ttis,
            rb_stride: num_ttis * plane,
            tti_stride: plane,
            data,
        })
    }

    /// Tensor that varies per TTI but is identical on every RB. `data` is in
    /// `(t, m, k)` row-major order.
    fn per_tti(
        num_antennas: usize,
        num_users: usize,
        num_rbs: usize,
        num_ttis: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        debug_assert_eq!(data.len(), num_ttis * num_antennas * num_users);
        check_finite(&data)?;
        Ok(Self {
            num_antennas,
            num_users,
            num_rbs,
            num_ttis,
            rb_stride: 0,
            tti_stride: num_antennas * num_users,
            data,
        })
    }

    /// Tensor identical on every (RB, TTI). `data` is `(m, k)` row-major.
    fn constant(
        num_antennas: usize,
        num_users: usize,
        num_rbs: usize,
        num_ttis: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        debug_assert_eq!(data.len(), num_antennas * num_users);
        check_finite(&data)?;
        Ok(Self {
            num_antennas,
            num_users,
            num_rbs,
            num_ttis,
            rb_stride: 0,
            tti_stride: 0,
            data,
        })
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_rbs(&self) -> usize {
        self.num_rbs
    }

    pub fn num_ttis(&self) -> usize {
        self.num_ttis
    }

    fn check_index(&self, b: usize, t: usize, m: usize, k: usize) -> Result<()> {
        if b >= self.num_rbs || t >= self.num_ttis || m >= self.num_antennas || k >= self.num_users
        {
            return Err(Error::IndexOutOfRange(format!(
                "(b={b}, t={t}, m={m}, k={k}) outside ({}, {}, {}, {})",
                self.num_rbs, self.num_ttis, self.num_antennas, self.num_users
            )));
        }
        Ok(())
    }

    #[inline]
    fn base(&self, b: usize, t: usize) -> usize {
        b * self.rb_stride + t * self.tti_stride
    }

    /// Coefficient for antenna `m`, user `k` on `(b, t)`. Panics on
    /// out-of-range indices; use the checked operations for untrusted input.
    #[inline]
    pub fn coeff(&self, b: usize, t: usize, m: usize, k: usize) -> Complex64 {
        self.data[self.base(b, t) + m * self.num_users + k]
    }

    /// The length-M channel vector of user `k` on `(b, t)`.
    pub fn user_vector(&self, b: usize, t: usize, k: usize) -> Vec<Complex64> {
        let base = self.base(b, t);
        (0..self.num_antennas)
            .map(|m| self.data[base + m * self.num_users + k])
            .collect()
    }

    /// M x |users| matrix whose columns are the users' channel vectors.
    pub fn submatrix(&self, b: usize, t: usize, users: &[usize]) -> nalgebra::DMatrix<Complex64> {
        let base = self.base(b, t);
        nalgebra::DMatrix::from_fn(self.num_antennas, users.len(), |m, j| {
            self.data[base + m * self.num_users + users[j]]
        })
    }

    /// Squared channel norm `||h_k||^2` of user `k` on `(b, t)`.
    pub fn gain(&self, b: usize, t: usize, k: usize) -> Result<f64> {
        self.check_index(b, t, 0, k)?;
        Ok(self.gain_unchecked(b, t, k))
    }

    #[inline]
    fn gain_unchecked(&self, b: usize, t: usize, k: usize) -> f64 {
        let base = self.base(b, t);
        let mut acc = 0.0;
        for m in 0..self.num_antennas {
            acc += self.data[base + m * self.num_users + k].norm_sqr();
        }
        acc
    }

    /// Gains of every user on every RB at TTI `t`, indexed `[k * B + b]`.
    /// RB-broadcast tensors compute one row and replicate it.
    pub fn gain_table(&self, t: usize) -> Vec<f64> {
        let nb = self.num_rbs;
        let mut table = vec![0.0; self.num_users * nb];
        let rbs = if self.rb_stride == 0 { 1 } else { nb };
        for b in 0..rbs {
            let base = self.base(b, t);
            for m in 0..self.num_antennas {
                let row = &self.data[base + m * self.num_users..base + (m + 1) * self.num_users];
                for (k, z) in row.iter().enumerate() {
                    table[k * nb + b] += z.norm_sqr();
                }
            }
        }
        if self.rb_stride == 0 && nb > 1 {
            for k in 0..self.num_users {
                let g = table[k * nb];
                table[k * nb + 1..(k + 1) * nb].fill(g);
            }
        }
        table
    }

    /// Normalized absolute inner product of two users' channel vectors on
    /// `(b, t)`: 1 for collinear vectors, 0 for orthogonal ones.
    pub fn correlation(&self, b: usize, t: usize, i: usize, j: usize) -> Result<f64> {
        self.check_index(b, t, 0, i)?;
        self.check_index(b, t, 0, j)?;
        let base = self.base(b, t);
        let mut inner = Complex64::new(0.0, 0.0);
        let mut norm_i = 0.0;
        let mut norm_j = 0.0;
        for m in 0..self.num_antennas {
            let hi = self.data[base + m * self.num_users + i];
            let hj = self.data[base + m * self.num_users + j];
            inner += hi.conj() * hj;
            norm_i += hi.norm_sqr();
            norm_j += hj.norm_sqr();
        }
        if norm_i == 0.0 {
            return Err(Error::ZeroNormChannel { user: i, rb: b, tti: t });
        }
        if norm_j == 0.0 {
            return Err(Error::ZeroNormChannel { user: j, rb: b, tti: t });
        }
        Ok((inner.norm() / (norm_i * norm_j).sqrt()).min(1.0))
    }

    /// FNV-1a hash of dimensions and logical coefficient bits, independent
    /// of the storage layout. Used to assert that paired scheduler runs saw
    /// bit-identical channels.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for d in [self.num_antennas, self.num_users, self.num_rbs, self.num_ttis] {
            mix(d as u64);
        }
        for b in 0..self.num_rbs {
            for t in 0..self.num_ttis {
                let base = self.base(b, t);
                for z in &self.data[base..base + self.num_antennas * self.num_users] {
                    mix(z.re.to_bits());
                    mix(z.im.to_bits());
                }
            }
        }
        h
    }
}

impl PartialEq for ChannelTensor {
    /// Logical equality over all `(b, t, m, k)` entries, layout-independent.
    fn eq(&self, other: &Self) -> bool {
        if (self.num_antennas, self.num_users, self.num_rbs, self.num_ttis)
            != (other.num_antennas, other.num_users, other.num_rbs, other.num_ttis)
        {
            return false;
        }
        let plane = self.num_antennas * self.num_users;
        for b in 0..self.num_rbs {
            for t in 0..self.num_ttis {
                let a = self.base(b, t);
                let o = other.base(b, t);
                if self.data[a..a + plane] != other.data[o..o + plane] {
                    return false;
                }
            }
        }
        true
    }
}

fn check_finite(data: &[Complex64]) -> Result<()> {
    for (index, z) in data.iter().enumerate() {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::NonFiniteCoefficient { index });
        }
    }
    Ok(())
}

/// Free-function form of [`ChannelTensor::gain`].
pub fn channel_gain(tensor: &ChannelTensor, b: usize, t: usize, k: usize) -> Result<f64> {
    tensor.gain(b, t, k)
}

/// Free-function form of [`ChannelTensor::correlation`].
pub fn inter_user_correlation(
    tensor: &ChannelTensor,
    b: usize,
    t: usize,
    i: usize,
    j: usize,
) -> Result<f64> {
    tensor.correlation(b, t, i, j)
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

/// Loads a channel trace.
///
/// Layout: 32-byte header (magic `MMCH`, version u32, M u32, N u32, B u32,
/// T u32, 8 reserved bytes), then little-endian f32 `(re, im)` pairs in
/// `(b, t, m, k)` row-major order.
pub fn load_trace(path: impl AsRef<Path>) -> Result<ChannelTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut header = [0u8; TRACE_HEADER_LEN];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::MalformedHeader("file shorter than the 32-byte header".into()))?;
    if &header[0..4] != TRACE_MAGIC {
        return Err(Error::MalformedHeader(format!(
            "bad magic {:?}, expected {:?}",
            &header[0..4],
            TRACE_MAGIC
        )));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != TRACE_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {version}, expected {TRACE_VERSION}"
        )));
    }
    let (m, n, b, t) = (word(8) as usize, word(12) as usize, word(16) as usize, word(20) as usize);
    if m == 0 || n == 0 || b == 0 || t == 0 {
        return Err(Error::MalformedHeader(format!(
            "zero dimension in header (M={m}, N={n}, B={b}, T={t})"
        )));
    }

    let count = b
        .checked_mul(t)
        .and_then(|v| v.checked_mul(m))
        .and_then(|v| v.checked_mul(n))
        .ok_or_else(|| Error::MalformedHeader("dimension product overflows".into()))?;
    let expected = count as u64 * 8;
    let mut payload = Vec::new();
    reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    if payload.len() as u64 != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len() as u64,
        });
    }

    let mut data = Vec::with_capacity(count);
    for pair in payload.chunks_exact(8) {
        let re = f32::from_le_bytes(pair[0..4].try_into().unwrap());
        let im = f32::from_le_bytes(pair[4..8].try_into().unwrap());
        data.push(Complex64::new(re as f64, im as f64));
    }
    ChannelTensor::from_coefficients(m, n, b, t, data)
}

/// Writes `tensor` in the [`load_trace`] layout. Coefficients are stored as
/// f32 pairs; tensors produced by [`generate_synthetic`] or a previous load
/// round-trip bit-exactly.
pub fn save_trace(tensor: &ChannelTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);

    let mut header = [0u8; TRACE_HEADER_LEN];
    header[0..4].copy_from_slice(TRACE_MAGIC);
    header[4..8].copy_from_slice(&TRACE_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&(tensor.num_antennas as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(tensor.num_users as u32).to_le_bytes());
    header[16..20].copy_from_slice(&(tensor.num_rbs as u32).to_le_bytes());
    header[20..24].copy_from_slice(&(tensor.num_ttis as u32).to_le_bytes());
    writer.write_all(&header).map_err(|e| Error::io(path, e))?;

    let plane = tensor.num_antennas * tensor.num_users;
    for b in 0..tensor.num_rbs {
        for t in 0..tensor.num_ttis {
            let base = tensor.base(b, t);
            for i in base..base + plane {
                let z = tensor.data[i];
                writer
                    .write_all(&(z.re as f32).to_le_bytes())
                    .and_then(|_| writer.write_all(&(z.im as f32).to_le_bytes()))
                    .map_err(|e| Error::io(path, e))?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Clustered user topology for the synthetic generator. Users of one cluster
/// share a steering direction; the mixing weights reproduce a target
/// intra-/inter-cluster correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub num_users: usize,
    pub num_clusters: usize,
    /// Users per cluster; must sum to `num_users`.
    pub users_per_cluster: Vec<usize>,
    /// Target |correlation| between users of the same cluster, in [0, 1].
    pub intra_cluster_corr: f64,
    /// Target |correlation| across clusters; at most `intra_cluster_corr`.
    pub inter_cluster_corr: f64,
    /// Line-of-sight flag per cluster; NLoS clusters are attenuated 3 dB.
    pub los_flags: Vec<bool>,
    pub seed: u64,
}

impl ClusterSpec {
    /// Uniform clusters, all line-of-sight.
    pub fn uniform(
        num_clusters: usize,
        users_per_cluster: usize,
        intra: f64,
        inter: f64,
        seed: u64,
    ) -> Self {
        Self {
            num_users: num_clusters * users_per_cluster,
            num_clusters,
            users_per_cluster: vec![users_per_cluster; num_clusters],
            intra_cluster_corr: intra,
            inter_cluster_corr: inter,
            los_flags: vec![true; num_clusters],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidClusterSpec(msg));
        if self.num_clusters == 0 {
            return fail("num_clusters must be positive".into());
        }
        if self.users_per_cluster.len() != self.num_clusters {
            return fail(format!(
                "users_per_cluster has {} entries for {} clusters",
                self.users_per_cluster.len(),
                self.num_clusters
            ));
        }
        if self.los_flags.len() != self.num_clusters {
            return fail(format!(
                "los_flags has {} entries for {} clusters",
                self.los_flags.len(),
                self.num_clusters
            ));
        }
        let sum: usize = self.users_per_cluster.iter().sum();
        if sum != self.num_users {
            return fail(format!(
                "users_per_cluster sums to {sum}, spec declares {} users",
                self.num_users
            ));
        }
        if self.users_per_cluster.iter().any(|&c| c == 0) {
            return fail("empty cluster".into());
        }
        for (name, v) in [
            ("intra_cluster_corr", self.intra_cluster_corr),
            ("inter_cluster_corr", self.inter_cluster_corr),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.inter_cluster_corr > self.intra_cluster_corr {
            return fail(format!(
                "inter_cluster_corr {} exceeds intra_cluster_corr {}",
                self.inter_cluster_corr, self.intra_cluster_corr
            ));
        }
        Ok(())
    }

    /// Cluster index of user `k` under contiguous assignment.
    pub fn cluster_of(&self, k: usize) -> usize {
        let mut offset = 0;
        for (c, &n) in self.users_per_cluster.iter().enumerate() {
            offset += n;
            if k < offset {
                return c;
            }
        }
        self.num_clusters - 1
    }
}

/// How channels evolve across TTIs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MobilityMode {
    /// One realization, identical on every (RB, TTI).
    Static,
    /// Gauss-Markov evolution of each user's scattered component; weight 0
    /// freezes the channel, weight 1 redraws it every TTI.
    SlowMobility { innovation_weight: f64 },
    /// Each TTI every user independently hops to a uniformly drawn cluster
    /// with the given probability and redraws its channel there.
    FastMobility { hop_probability: f64 },
}

impl MobilityMode {
    fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidClusterSpec(format!("{name} = {v} outside [0, 1]")))
            }
        };
        match *self {
            MobilityMode::Static => Ok(()),
            MobilityMode::SlowMobility { innovation_weight } => {
                check("innovation_weight", innovation_weight)
            }
            MobilityMode::FastMobility { hop_probability } => {
                check("hop_probability", hop_probability)
            }
        }
    }
}

struct SynthModel {
    num_antennas: usize,
    steering: Vec<Vec<Complex64>>, // unit-norm, one per cluster
    rho: f64,                      // steering weight = intra correlation
    amplitude: Vec<f64>,           // per-cluster scale (NLoS attenuation)
}

impl SynthModel {
    fn new(spec: &ClusterSpec, num_antennas: usize, rng: &mut ChaCha8Rng) -> Self {
        // Shared component across clusters sets the inter-cluster floor:
        // steering overlap kappa and steering weight rho give cross-cluster
        // correlation rho * kappa = inter.
        let rho = spec.intra_cluster_corr;
        let kappa = if rho > 0.0 { spec.inter_cluster_corr / rho } else { 0.0 };
        let global = unit_vector(num_antennas, rng);
        let steering = (0..spec.num_clusters)
            .map(|_| {
                let own = unit_vector(num_antennas, rng);
                let mixed: Vec<Complex64> = global
                    .iter()
                    .zip(&own)
                    .map(|(g, u)| kappa.sqrt() * g + (1.0 - kappa).sqrt() * u)
                    .collect();
                normalize(mixed)
            })
            .collect();
        let amplitude = spec
            .los_flags
            .iter()
            .map(|&los| if los { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 })
            .collect();
        Self {
            num_antennas,
            steering,
            rho,
            amplitude,
        }
    }

    fn scatter(&self, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        // i.i.d. CN(0, 1/M) entries: unit expected norm.
        gaussian_vector(self.num_antennas, rng)
    }

    fn compose(&self, cluster: usize, scatter: &[Complex64]) -> Vec<Complex64> {
        let a = self.amplitude[cluster];
        let sw = self.rho.sqrt();
        let nw = (1.0 - self.rho).sqrt();
        self.steering[cluster]
            .iter()
            .zip(scatter)
            .map(|(s, n)| {
                let z = a * (sw * s + nw * n);
                // Quantize through f32 so save/load round-trips are bit-exact.
                Complex64::new(z.re as f32 as f64, z.im as f32 as f64)
            })
            .collect()
    }
}

fn gaussian_vector(len: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let scale = (0.5 / len as f64).sqrt();
    (0..len)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * scale, im * scale)
        })
        .collect()
}

fn unit_vector(len: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    normalize(gaussian_vector(len, rng))
}

fn normalize(mut v: Vec<Complex64>) -> Vec<Complex64> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for z in &mut v {
            *z /= norm;
        }
    }
    v
}

/// Generates a clustered synthetic channel, deterministic for a fixed seed.
///
/// Same-cluster user pairs land near `intra_cluster_corr`, cross-cluster
/// pairs near `inter_cluster_corr`. Channels are identical across RBs within
/// a TTI; mobility evolves them across TTIs.
pub fn generate_synthetic(
    spec: &ClusterSpec,
    num_antennas: usize,
    num_rbs: usize,
    num_ttis: usize,
    mobility: MobilityMode,
) -> Result<ChannelTensor> {
    spec.validate()?;
    mobility.validate()?;
    if num_antennas == 0 || num_rbs == 0 || num_ttis == 0 {
        return Err(Error::InvalidClusterSpec(
            "antennas, RBs, and TTIs must be positive".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let model = SynthModel::new(spec, num_antennas, &mut rng);
    let n = spec.num_users;
    let m = num_antennas;

    let mut clusters: Vec<usize> = (0..n).map(|k| spec.cluster_of(k)).collect();
    let mut scatters: Vec<Vec<Complex64>> = (0..n).map(|_| model.scatter(&mut rng)).collect();

    let write_plane = |plane: &mut [Complex64], clusters: &[usize], scatters: &[Vec<Complex64>]| {
        for k in 0..n {
            let h = model.compose(clusters[k], &scatters[k]);
            for (mi, z) in h.into_iter().enumerate() {
                plane[mi * n + k] = z;
            }
        }
    };

    match mobility {
        MobilityMode::Static => {
            let mut plane = vec![Complex64::default(); m * n];
            write_plane(&mut plane, &clusters, &scatters);
            ChannelTensor::constant(m, n, num_rbs, num_ttis, plane)
        }
        MobilityMode::SlowMobility { innovation_weight } => {
            let keep = (1.0 - innovation_weight).sqrt();
            let innovate = innovation_weight.sqrt();
            let mut data = vec![Complex64::default(); num_ttis * m * n];
            for t in 0..num_ttis {
                if t > 0 {
                    for scatter in scatters.iter_mut() {
                        let fresh = model.scatter(&mut rng);
                        for (s, f) in scatter.iter_mut().zip(fresh) {
                            *s = keep * *s + innovate * f;
                        }
                    }
                }
                write_plane(&mut data[t * m * n..(t + 1) * m * n], &clusters, &scatters);
            }
            ChannelTensor::per_tti(m, n, num_rbs, num_ttis, data)
        }
        MobilityMode::FastMobility { hop_probability } => {
            let mut data = vec![Complex64::default(); num_ttis * m * n];
            for t in 0..num_ttis {
                if t > 0 {
                    for k in 0..n {
                        if rng.random::<f64>() < hop_probability {
                            clusters[k] = rng.random_range(0..spec.num_clusters);
                            scatters[k] = model.scatter(&mut rng);
                        }
                    }
                }
                write_plane(&mut data[t * m * n..(t + 1) * m * n], &clusters, &scatters);
            }
            ChannelTensor::per_tti(m, n, num_rbs, num_ttis, data)
        }
    }
}
