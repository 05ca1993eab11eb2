//! Binary file formats: `STN1` trajectories and `STNM` model checkpoints.
//! Both are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, Trajectory};
use crate::neural::Mlp;

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"STN1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STNM";
pub const CHECKPOINT_VERSION: u32 = 1;

const TRAJECTORY_HEADER: usize = 4 + 8 + 8 + 8 + 8;

pub fn encode_trajectory(traj: &Trajectory) -> Vec<u8> {
    let mut out = Vec::with_capacity(TRAJECTORY_HEADER + 8 * traj.data().len());
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.extend_from_slice(&(traj.n_points() as u64).to_le_bytes());
    out.extend_from_slice(&(traj.n_steps() as u64).to_le_bytes());
    out.extend_from_slice(&traj.grid().length().to_le_bytes());
    out.extend_from_slice(&traj.dt().to_le_bytes());
    for v in traj.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != TRAJECTORY_MAGIC {
        return Err(Error::Format("not an STN1 trajectory (bad magic)".into()));
    }
    let n_x = r.u64()?;
    let n_t = r.u64()?;
    let length = r.f64()?;
    let dt = r.f64()?;
    let count = n_x
        .checked_mul(n_t)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Format("trajectory header sizes overflow".into()))?;
    let expected = TRAJECTORY_HEADER as u64 + count;
    if bytes.len() as u64 != expected {
        return Err(Error::Format(format!(
            "trajectory size mismatch: header implies {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = (0..n_x * n_t).map(|_| r.f64()).collect::<Result<_>>()?;
    let grid = Grid::new(length, n_x as usize).map_err(|e| Error::Format(format!("bad grid in header: {e}")))?;
    Trajectory::new(grid, dt, data).map_err(|e| Error::Format(format!("bad trajectory: {e}")))
}

pub fn write_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    fs::write(path, encode_trajectory(traj))?;
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    decode_trajectory(&fs::read(path)?)
}

/// Contents of an `STNM` checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub radius: usize,
    pub mlp: Mlp,
    pub trained_dx: f64,
    pub trained_dt: f64,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ck.radius as u32).to_le_bytes());
    out.extend_from_slice(&(ck.mlp.n_layers() as u32).to_le_bytes());
    for q in 0..ck.mlp.n_layers() {
        let (rows, cols) = ck.mlp.layer_shape(q);
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in ck.mlp.weights(q).iter().chain(ck.mlp.bias(q)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&ck.trained_dx.to_le_bytes());
    out.extend_from_slice(&ck.trained_dt.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an STNM checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let radius = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let nw = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_add(rows).saturating_mul(8) <= r.remaining())
            .ok_or_else(|| Error::Format("layer shape exceeds file size".into()))?;
        let w: Vec<f64> = (0..nw).map(|_| r.f64()).collect::<Result<_>>()?;
        let b: Vec<f64> = (0..rows).map(|_| r.f64()).collect::<Result<_>>()?;
        layers.push((rows, cols, w, b));
    }
    let trained_dx = r.f64()?;
    let trained_dt = r.f64()?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", r.remaining())));
    }
    let mlp = Mlp::from_layers(layers).map_err(|e| Error::Format(format!("bad layers: {e}")))?;
    if mlp.input_width() != 2 * radius + 1 {
        return Err(Error::Format(format!(
            "input width {} does not match stencil radius {radius}",
            mlp.input_width()
        )));
    }
    if !(trained_dx > 0.0) {
        return Err(Error::Format("trained dx must be positive".into()));
    }
    Ok(Checkpoint { radius, mlp, trained_dx, trained_dt })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let grid = Grid::new(2.0, 4).unwrap();
        Trajectory::new(grid, 0.5, (0..12).map(|v| v as f64 * 0.25).collect()).unwrap()
    }

    #[test]
    fn trajectory_round_trip() {
        let t = sample();
        let bytes = encode_trajectory(&t);
        assert_eq!(&bytes[..4], b"STN1");
        assert_eq!(bytes.len(), 36 + 12 * 8);
        let back = decode_trajectory(&bytes).unwrap();
        assert_eq!(back.data(), t.data());
        assert_eq!(back.dt(), 0.5);
        assert_eq!(back.grid().length(), 2.0);
    }

    #[test]
    fn trajectory_rejects_bad_input() {
        let mut bytes = encode_trajectory(&sample());
        bytes.pop();
        assert!(matches!(decode_trajectory(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_trajectory(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode_trajectory(&bytes), Err(Error::Format(_))));
        assert!(decode_trajectory(b"STN1").is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mlp = Mlp::init_he(&[3, 4, 1], 7).unwrap();
        let ck = Checkpoint { radius: 1, mlp, trained_dx: 0.1, trained_dt: 0.01 };
        let bytes = encode_checkpoint(&ck);
        assert_eq!(&bytes[..4], b"STNM");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
        let mut short = bytes.clone();
        short.truncate(bytes.len() - 3);
        assert!(decode_checkpoint(&short).is_err());
    }

    #[test]
    fn checkpoint_radius_must_match() {
        let mlp = Mlp::init_he(&[5, 1], 7).unwrap();
        let ck = Checkpoint { radius: 1, mlp, trained_dx: 0.1, trained_dt: 0.01 };
        assert!(decode_checkpoint(&encode_checkpoint(&ck)).is_err());
    }
}
