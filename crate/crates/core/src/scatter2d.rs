//! First-order 2D scattering transform with a Morlet filter bank.
//!
//! ```text
//! S0       = x * phi_J
//! U_lambda = |x * psi_lambda|
//! S_lambda = U_lambda * phi_J
//! ```
//!
//! Convolutions are direct and spatial with reflect padding. The bank has
//! `J * L` band-pass kernels, so every transform yields `J * L + 1` maps.

use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

/// Morlet envelope width at scale `j` is `SIGMA0 * 2^j`.
pub const SIGMA0: f64 = 0.8;
/// Morlet center frequency at scale `j` is `XI0 / 2^j` (radians per pixel).
pub const XI0: f64 = 3.0 * PI / 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScatterError {
    #[error("invalid filter bank parameters: {0}")]
    InvalidBankParams(String),
    #[error("image {0}x{1} is smaller than the {2}x{2} kernel")]
    ImageTooSmall(usize, usize, usize),
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

pub type Result<T> = std::result::Result<T, ScatterError>;

/// Real-valued row-major 2D map.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RealMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(ScatterError::InvalidImage(format!(
                "{}x{} with {} values",
                width,
                height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Square kernel stored row-major, centered at `(size / 2, size / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel<T> {
    pub size: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Kernel<T> {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        self.data[y * self.size + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn norm(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBank {
    pub scales: usize,
    pub orientations: usize,
    pub kernel_size: usize,
    /// Indexed `j * L + l`.
    pub psi: Vec<Kernel<Complex>>,
    pub phi: Kernel<f64>,
}

fn coords(size: usize) -> impl Iterator<Item = (usize, f64, f64)> {
    let half = (size / 2) as f64;
    (0..size * size).map(move |i| (i, (i % size) as f64 - half, (i / size) as f64 - half))
}

/// Unnormalized Gabor `exp(-r^2 / 2 sigma^2) * exp(i xi (x cos t + y sin t))`
/// and its Gaussian envelope, sampled on the kernel grid.
fn gabor(size: usize, sigma: f64, xi: f64, theta: f64) -> (Vec<Complex>, Vec<f64>) {
    let (st, ct) = theta.sin_cos();
    let mut g = vec![Complex::default(); size * size];
    let mut env = vec![0.0; size * size];
    for (i, x, y) in coords(size) {
        let e = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
        let phase = xi * (x * ct + y * st);
        env[i] = e;
        g[i] = Complex {
            re: e * phase.cos(),
            im: e * phase.sin(),
        };
    }
    (g, env)
}

/// Morlet wavelet: Gabor minus the Gaussian-weighted mean that zeroes its DC
/// response on the sampled grid, scaled by `1 / (2 pi sigma^2)`.
pub fn morlet_kernel(size: usize, sigma: f64, xi: f64, theta: f64) -> Kernel<Complex> {
    let (g, env) = gabor(size, sigma, xi, theta);
    let env_sum: f64 = env.iter().sum();
    let beta_re = g.iter().map(|c| c.re).sum::<f64>() / env_sum;
    let beta_im = g.iter().map(|c| c.im).sum::<f64>() / env_sum;
    let norm = 1.0 / (2.0 * PI * sigma * sigma);
    let data = g
        .iter()
        .zip(&env)
        .map(|(c, e)| Complex {
            re: (c.re - beta_re * e) * norm,
            im: (c.im - beta_im * e) * norm,
        })
        .collect();
    Kernel { size, data }
}

/// Gaussian low-pass normalized to unit sum.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Kernel<f64> {
    let mut data: Vec<f64> = coords(size)
        .map(|(_, x, y)| (-(x * x + y * y) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= s);
    Kernel { size, data }
}

/// Morlet band-pass kernels at scales `2^j` (`j < J`) and orientations
/// `k pi / L`, plus a Gaussian low-pass at scale `2^J`.
pub fn build_morlet_bank(scales: usize, orientations: usize, kernel_size: usize) -> Result<WaveletBank> {
    if scales < 1 || orientations < 1 {
        return Err(ScatterError::InvalidBankParams(format!(
            "J = {scales} and L = {orientations} must be >= 1"
        )));
    }
    if kernel_size < 7 || kernel_size.is_multiple_of(2) {
        return Err(ScatterError::InvalidBankParams(format!(
            "kernel size {kernel_size} must be odd and >= 7"
        )));
    }
    if scales > 16 {
        return Err(ScatterError::InvalidBankParams(format!("J = {scales} is too large")));
    }
    let mut psi = Vec::with_capacity(scales * orientations);
    for j in 0..scales {
        let dilation = f64::from(1u32 << j);
        for l in 0..orientations {
            let theta = l as f64 * PI / orientations as f64;
            psi.push(morlet_kernel(
                kernel_size,
                SIGMA0 * dilation,
                XI0 / dilation,
                theta,
            ));
        }
    }
    let phi = gaussian_kernel(kernel_size, SIGMA0 * f64::from(1u32 << scales));
    Ok(WaveletBank {
        scales,
        orientations,
        kernel_size,
        psi,
        phi,
    })
}

impl WaveletBank {
    pub fn channel_count(&self) -> usize {
        self.scales * self.orientations + 1
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.scales
    }

    /// Upper bound on `sum ||S||^2 / ||x||^2` for any image.
    ///
    /// With reflect padding a convolution with kernel `k` has operator norm at
    /// most `2 ||k||_1` (each sample is reused at most twice per axis in any
    /// shifted window), and downsampling never adds energy.
    pub fn energy_gain_bound(&self) -> f64 {
        let phi_l1: f64 = self.phi.data.iter().map(|v| v.abs()).sum();
        let phi_gain = 2.0 * phi_l1;
        let mut total = phi_gain * phi_gain;
        for k in &self.psi {
            let l1: f64 = k.data.iter().map(Complex::norm).sum();
            let g = phi_gain * 2.0 * l1;
            total += g * g;
        }
        total
    }
}

/// `d c b | a b c d | c b a`
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// `out(p) = sum_q k(q) x(p - q)`, reflect-padded, same size as `x`.
pub fn convolve_real(x: &RealMap, k: &Kernel<f64>) -> RealMap {
    let half = (k.size / 2) as isize;
    let mut out = vec![0.0; x.width * x.height];
    out.par_chunks_mut(x.width).enumerate().for_each(|(py, row)| {
        for (px, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ky in 0..k.size {
                let sy = reflect(py as isize - (ky as isize - half), x.height);
                for kx in 0..k.size {
                    let sx = reflect(px as isize - (kx as isize - half), x.width);
                    acc += k.at(kx, ky) * x.at(sx, sy);
                }
            }
            *o = acc;
        }
    });
    RealMap {
        width: x.width,
        height: x.height,
        data: out,
    }
}

/// `|x * k|` for a complex kernel, reflect-padded, same size as `x`.
pub fn convolve_modulus(x: &RealMap, k: &Kernel<Complex>) -> RealMap {
    let half = (k.size / 2) as isize;
    let mut out = vec![0.0; x.width * x.height];
    out.par_chunks_mut(x.width).enumerate().for_each(|(py, row)| {
        for (px, o) in row.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for ky in 0..k.size {
                let sy = reflect(py as isize - (ky as isize - half), x.height);
                for kx in 0..k.size {
                    let sx = reflect(px as isize - (kx as isize - half), x.width);
                    let v = x.at(sx, sy);
                    let c = k.at(kx, ky);
                    re += c.re * v;
                    im += c.im * v;
                }
            }
            *o = re.hypot(im);
        }
    });
    RealMap {
        width: x.width,
        height: x.height,
        data: out,
    }
}

/// Keeps every `factor`-th sample on both axes; output is `floor(n / factor)`.
pub fn downsample(x: &RealMap, factor: usize) -> RealMap {
    let w = x.width / factor;
    let h = x.height / factor;
    RealMap::from_fn(w, h, |cx, cy| x.at(cx * factor, cy * factor))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterOutput {
    pub s0: RealMap,
    /// Indexed `j * L + l`.
    pub s_lambda: Vec<RealMap>,
    /// Full-resolution modulus maps, when requested.
    pub u_lambda: Option<Vec<RealMap>>,
    pub out_width: usize,
    pub out_height: usize,
}

impl ScatterOutput {
    pub fn channel_count(&self) -> usize {
        self.s_lambda.len() + 1
    }

    /// `S0` followed by every `S_lambda`.
    pub fn channels(&self) -> impl Iterator<Item = &RealMap> {
        std::iter::once(&self.s0).chain(self.s_lambda.iter())
    }
}

fn check_image(image: &RealMap, bank: &WaveletBank) -> Result<()> {
    if image.data.len() != image.width * image.height || image.width == 0 || image.height == 0 {
        return Err(ScatterError::InvalidImage("dimension/data mismatch".into()));
    }
    if image.data.iter().any(|v| !v.is_finite()) {
        return Err(ScatterError::InvalidImage("non-finite pixel".into()));
    }
    if image.width < bank.kernel_size || image.height < bank.kernel_size {
        return Err(ScatterError::ImageTooSmall(
            image.width,
            image.height,
            bank.kernel_size,
        ));
    }
    Ok(())
}

/// First-order scattering. With `downsample` the maps are subsampled by
/// `2^J`; without it they keep the input resolution.
pub fn scatter_order1(image: &RealMap, bank: &WaveletBank, downsample_output: bool) -> Result<ScatterOutput> {
    scatter_order1_with(image, bank, downsample_output, false)
}

/// As [`scatter_order1`], optionally retaining the modulus maps `U_lambda`.
pub fn scatter_order1_with(
    image: &RealMap,
    bank: &WaveletBank,
    downsample_output: bool,
    keep_u: bool,
) -> Result<ScatterOutput> {
    check_image(image, bank)?;
    let factor = if downsample_output {
        bank.downsample_factor()
    } else {
        1
    };
    let finish = |m: RealMap| {
        if factor > 1 {
            downsample(&m, factor)
        } else {
            m
        }
    };
    let s0 = finish(convolve_real(image, &bank.phi));
    let (s_lambda, u): (Vec<RealMap>, Vec<RealMap>) = bank
        .psi
        .par_iter()
        .map(|psi| {
            let u = convolve_modulus(image, psi);
            let s = finish(convolve_real(&u, &bank.phi));
            (s, u)
        })
        .unzip();
    Ok(ScatterOutput {
        out_width: s0.width,
        out_height: s0.height,
        s0,
        s_lambda,
        u_lambda: keep_u.then_some(u),
    })
}

/// Bilinear resize to `(2W) x (2H)` with half-pixel centers and edge clamping.
pub fn upsample2_bilinear(x: &RealMap) -> RealMap {
    let sample = |dst: usize, n: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    RealMap::from_fn(2 * x.width, 2 * x.height, |dx, dy| {
        let (x0, x1, fx) = sample(dx, x.width);
        let (y0, y1, fy) = sample(dy, x.height);
        let top = x.at(x0, y0) * (1.0 - fx) + x.at(x1, y0) * fx;
        let bottom = x.at(x0, y1) * (1.0 - fx) + x.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

pub fn relu(x: &RealMap) -> RealMap {
    x.map(|v| v.max(0.0))
}

/// Resolution-preserving block: 2x bilinear upsample, first-order scattering
/// with `2^1` downsampling, then rectification. Needs a `J = 1` bank.
pub fn scatblock_forward(image: &RealMap, bank: &WaveletBank) -> Result<ScatterOutput> {
    if bank.scales != 1 {
        return Err(ScatterError::InvalidBankParams(format!(
            "the block needs J = 1, bank has J = {}",
            bank.scales
        )));
    }
    let up = upsample2_bilinear(image);
    let out = scatter_order1(&up, bank, true)?;
    Ok(ScatterOutput {
        s0: relu(&out.s0),
        s_lambda: out.s_lambda.iter().map(relu).collect(),
        u_lambda: None,
        out_width: out.out_width,
        out_height: out.out_height,
    })
}
