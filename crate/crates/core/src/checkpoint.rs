//! Versioned binary model checkpoints.
//!
//! Layout: the 8-byte magic `LEANDCKP`, a little-endian `u32` version, then
//! the scaler, autoencoder, feature map, density model and detector scalars.
//! Every float is stored as its IEEE-754 bit pattern, so a round trip is
//! bit-exact.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::autoencoder::{self, Activation, Architecture};
use crate::dataset::Scaler;
use crate::density::{DensityModel, Normalization};
use crate::detector::LeandModel;
use crate::fourier::FeatureMap;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LEANDCKP";
pub const VERSION: u32 = 1;

/// A fitted model plus the seed it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LeandModel,
    pub seed: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn floats<'a>(&mut self, vs: impl ExactSizeIterator<Item = &'a f64>) {
        self.usize(vs.len());
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Checkpoint(format!("array of {n} floats exceeds file size")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let v = self.floats()?;
        Array2::from_shape_vec((rows, cols), v).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.u64(self.seed);

        w.floats(m.scaler.mean.iter());
        w.floats(m.scaler.scale.iter());

        let arch = m.autoencoder.architecture();
        w.usize(arch.input_dim());
        w.usize(arch.depth());
        for &s in arch.encoder_sizes() {
            w.usize(s);
        }
        w.0.push(arch.activation().code());
        w.0.push(u8::from(arch.allows_overcomplete()));
        w.floats(m.autoencoder.to_flat().iter());

        let map = &m.feature_map;
        w.usize(map.dim());
        w.usize(map.input_dim());
        w.floats(map.weights.iter());
        w.floats(map.offsets.iter());
        w.f64(map.scaling);
        w.f64(map.gamma);

        let d = &m.density;
        w.usize(d.rank());
        w.usize(d.dim());
        w.floats(d.eigvecs().iter());
        w.floats(d.eigenvalues().iter());
        w.f64(d.normalization().gamma);
        w.f64(d.normalization().log_norm);

        w.f64(m.alpha);
        w.f64(m.anomaly_rate);
        w.f64(m.tau);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
        }
        let seed = r.u64()?;

        let scaler = Scaler {
            mean: r.floats()?,
            scale: r.floats()?,
        };
        if scaler.mean.len() != scaler.scale.len() {
            return Err(Error::Checkpoint("scaler arrays differ in length".into()));
        }

        let input_dim = r.usize()?;
        let depth = r.usize()?;
        if depth > 1024 {
            return Err(Error::Checkpoint(format!("implausible depth {depth}")));
        }
        let sizes = (0..depth).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let activation = Activation::from_code(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown activation".into()))?;
        let arch = if r.u8()? == 1 {
            Architecture::overcomplete(input_dim, sizes, activation)?
        } else {
            Architecture::new(input_dim, sizes, activation)?
        };
        let mut ae = autoencoder::init(&arch, 0);
        let flat = r.floats()?;
        Error::check_dim(ae.num_params(), flat.len())?;
        ae.set_flat(&flat);

        let (dd, m) = (r.usize()?, r.usize()?);
        let map = FeatureMap {
            weights: r.matrix(dd, m)?,
            offsets: Array1::from(r.floats()?),
            scaling: r.f64()?,
            gamma: r.f64()?,
        };
        Error::check_dim(dd, map.offsets.len())?;

        let (rank, dim) = (r.usize()?, r.usize()?);
        let eigvecs = r.matrix(rank, dim)?;
        let eigenvalues = Array1::from(r.floats()?);
        let norm = Normalization {
            gamma: r.f64()?,
            log_norm: r.f64()?,
        };
        let density = DensityModel::new(eigvecs, eigenvalues, norm)?;

        let (alpha, rate, tau) = (r.f64()?, r.f64()?, r.f64()?);
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let model = LeandModel::from_parts(scaler, ae, map, density, alpha, rate, tau)?;
        Ok(Checkpoint { model, seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DataTable, Label};
    use crate::detector::{fit, LeandConfig};
    use crate::fourier::AffConfig;
    use crate::optim::StageConfig;
    use ndarray::Array2;

    fn model() -> LeandModel {
        let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0);
        let t = DataTable::new("t", x, vec![Label::Normal; 30]).unwrap();
        let cfg = LeandConfig {
            architecture: vec![4, 2],
            rff_dim: 16,
            rank: 4,
            anomaly_rate: Some(0.1),
            pretrain: StageConfig {
                epochs: 2,
                ..StageConfig::default()
            },
            aff: AffConfig {
                epochs: 1,
                ..AffConfig::default()
            },
            joint: StageConfig {
                epochs: 2,
                ..StageConfig::default()
            },
            ..LeandConfig::default()
        };
        fit(&t, &cfg).unwrap().model
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = Checkpoint { model: model(), seed: 99 };
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        let q = ndarray::array![0.3, 1.1, -0.4];
        assert_eq!(
            c.model.score(q.view()).unwrap().to_bits(),
            back.model.score(q.view()).unwrap().to_bits()
        );
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = Checkpoint { model: model(), seed: 1 };
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = Checkpoint { model: model(), seed: 1 }.to_bytes();
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::Checkpoint(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
