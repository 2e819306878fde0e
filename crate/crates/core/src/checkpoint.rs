//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "EXPOMFCK"
//! version    u32
//! U, I, K    u64 x 3
//! theta      u64 byte length, then U*K f64
//! beta       u64 byte length, then I*K f64
//! exposure   u8 tag, then variant payload
//!              0 fixed       mu
//!              1 per-item    alpha1, alpha2, I x mu
//!              2 covariate   L u64, use_bias u8, step f64, batch u64,
//!                            epochs u64, 32-byte SHA-256 of the covariates,
//!                            U*L psi, U gamma, I*L covariates
//!              3 confidence  c0, c1
//! hyper      k u64, lambda_theta, lambda_beta, lambda_y, alpha1, alpha2,
//!            init_scale, seed u64
//! iteration  u64
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{CovariateMatrix, FactorMatrix, Hyperparameters, ModelState};
use crate::error::{Error, Result};
use crate::exposure::{CovariatePrior, CovariateSettings, ExposurePrior, PerItemPrior};

pub const MAGIC: &[u8; 8] = b"EXPOMFCK";
pub const VERSION: u32 = 1;

/// SHA-256 over the little-endian bytes of the covariate matrix.
pub fn covariate_digest(x: &CovariateMatrix) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((x.n_items() as u64).to_le_bytes());
    h.update((x.dim() as u64).to_le_bytes());
    for v in x.as_slice() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
}

pub fn to_bytes(state: &ModelState) -> Result<Vec<u8>> {
    state.validate()?;
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.usize(state.n_users());
    w.usize(state.n_items());
    w.usize(state.hyper.k);
    for m in [&state.theta, &state.beta] {
        w.usize(m.as_slice().len() * 8);
        w.f64s(m.as_slice());
    }
    match &state.exposure {
        ExposurePrior::Fixed { mu } => {
            w.u8(0);
            w.f64(*mu);
        }
        ExposurePrior::PerItem(p) => {
            w.u8(1);
            w.f64(p.alpha1);
            w.f64(p.alpha2);
            w.f64s(&p.mu);
        }
        ExposurePrior::Covariate(c) => {
            w.u8(2);
            w.usize(c.covariates.dim());
            w.u8(c.settings.use_bias as u8);
            w.f64(c.settings.step_size);
            w.usize(c.settings.batch_size);
            w.usize(c.settings.epochs_per_m_step);
            w.0.extend_from_slice(&covariate_digest(&c.covariates));
            w.f64s(c.psi.as_slice());
            w.f64s(&c.gamma);
            w.f64s(c.covariates.as_slice());
        }
        ExposurePrior::Confidence { c0, c1 } => {
            w.u8(3);
            w.f64(*c0);
            w.f64(*c1);
        }
    }
    let h = &state.hyper;
    w.usize(h.k);
    w.f64s(&[h.lambda_theta, h.lambda_beta, h.lambda_y, h.alpha1, h.alpha2, h.init_scale]);
    w.u64(h.seed);
    w.u64(state.iteration);
    Ok(w.0)
}

/// Write the checkpoint through a temporary sibling file and rename it in place.
pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(state)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(Error::Format(format!(
                "truncated {what}: expected {n} bytes, found {remaining}"
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in memory")))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format(format!("{what} length overflows")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn checked_len(a: usize, b: usize, what: &str) -> Result<usize> {
    a.checked_mul(b)
        .ok_or_else(|| Error::Format(format!("{what} size {a} x {b} overflows")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("not an expomf checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    let n_users = r.usize("user count")?;
    let n_items = r.usize("item count")?;
    let k = r.usize("latent dimension")?;

    let mut block = |rows: usize, name: &str| -> Result<FactorMatrix> {
        let declared = r.usize(&format!("{name} length"))?;
        let expected = checked_len(checked_len(rows, k, name)?, 8, name)?;
        if declared != expected {
            return Err(Error::Dimension(format!(
                "{name} block holds {declared} bytes, header implies {expected}"
            )));
        }
        let data = r.f64s(rows * k, name)?;
        FactorMatrix::from_vec(rows, k, data)
    };
    let theta = block(n_users, "theta")?;
    let beta = block(n_items, "beta")?;

    let exposure = match r.u8("exposure tag")? {
        0 => ExposurePrior::Fixed { mu: r.f64("mu")? },
        1 => {
            let alpha1 = r.f64("alpha1")?;
            let alpha2 = r.f64("alpha2")?;
            let mu = r.f64s(n_items, "per-item mu")?;
            ExposurePrior::PerItem(PerItemPrior { mu, alpha1, alpha2 })
        }
        2 => {
            let dim = r.usize("covariate dimension")?;
            let use_bias = match r.u8("use_bias")? {
                0 => false,
                1 => true,
                b => return Err(Error::Format(format!("use_bias flag must be 0 or 1, found {b}"))),
            };
            let settings = CovariateSettings {
                step_size: r.f64("step size")?,
                batch_size: r.usize("batch size")?,
                epochs_per_m_step: r.usize("epochs")?,
                use_bias,
            };
            let digest: [u8; 32] = r.take(32, "covariate digest")?.try_into().unwrap();
            let psi = r.f64s(checked_len(n_users, dim, "psi")?, "psi")?;
            let gamma = r.f64s(n_users, "gamma")?;
            let raw = r.f64s(checked_len(n_items, dim, "covariates")?, "covariates")?;
            let covariates = CovariateMatrix::new(n_items, dim, raw)?;
            if covariate_digest(&covariates) != digest {
                return Err(Error::Format("covariate block does not match its digest".into()));
            }
            ExposurePrior::Covariate(CovariatePrior {
                psi: FactorMatrix::from_vec(n_users, dim, psi)?,
                gamma,
                covariates,
                settings,
            })
        }
        3 => ExposurePrior::Confidence {
            c0: r.f64("c0")?,
            c1: r.f64("c1")?,
        },
        t => return Err(Error::Format(format!("unknown exposure tag {t}"))),
    };

    let hyper_k = r.usize("hyper k")?;
    if hyper_k != k {
        return Err(Error::Dimension(format!(
            "hyperparameter k = {hyper_k} disagrees with header K = {k}"
        )));
    }
    let hyper = Hyperparameters {
        k,
        lambda_theta: r.f64("lambda_theta")?,
        lambda_beta: r.f64("lambda_beta")?,
        lambda_y: r.f64("lambda_y")?,
        alpha1: r.f64("alpha1")?,
        alpha2: r.f64("alpha2")?,
        init_scale: r.f64("init_scale")?,
        seed: r.u64("seed")?,
    };
    let iteration = r.u64("iteration")?;
    if r.pos != bytes.len() {
        return Err(Error::Dimension(format!(
            "{} unexpected trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let state = ModelState {
        theta,
        beta,
        exposure,
        hyper,
        iteration,
    };
    state.validate()?;
    Ok(state)
}
