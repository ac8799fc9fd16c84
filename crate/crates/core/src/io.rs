//! Binary field files, model checkpoints and trajectory directories.
//!
//! Field file layout (all integers little-endian):
//!
//! ```text
//! "SGFF" | u32 version | u8 ndim | u32 × ndim dims | u32 channels | f64 × len
//! ```
//!
//! Checkpoints reuse the header with magic `"SGFC"`. Their dims hold the
//! architecture `[ndim, hidden, lambda_dim, param_count]`, the channel slot is
//! 1, and the payload is `[beta_min, beta_max, θ...]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::model::{LocalScoreArch, LocalScoreNet, TrainableScoreModel};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Result, SgfmError};
use crate::field::{Field, Grid, Trajectory};

pub const FIELD_MAGIC: [u8; 4] = *b"SGFF";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SGFC";
pub const FORMAT_VERSION: u32 = 1;

struct Header {
    dims: Vec<u32>,
    channels: u32,
    payload_offset: usize,
}

fn encode(magic: [u8; 4], dims: &[u32], channels: u32, payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 4 * dims.len() + 8 * payload.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&channels.to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = *at + n;
    if end > bytes.len() {
        return Err(SgfmError::Header(format!("file ends inside the header at byte {}", bytes.len())));
    }
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

fn u32_at(bytes: &[u8], at: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, at, 4)?.try_into().unwrap()))
}

fn decode_header(bytes: &[u8], magic: [u8; 4]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(SgfmError::Header("file shorter than its magic".into()));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(SgfmError::MagicMismatch { expected: magic, found });
    }
    let mut at = 4;
    let version = u32_at(bytes, &mut at)?;
    if version != FORMAT_VERSION {
        return Err(SgfmError::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let ndim = take(bytes, &mut at, 1)?[0] as usize;
    let dims = (0..ndim).map(|_| u32_at(bytes, &mut at)).collect::<Result<Vec<_>>>()?;
    let channels = u32_at(bytes, &mut at)?;
    Ok(Header {
        dims,
        channels,
        payload_offset: at,
    })
}

fn decode_payload(bytes: &[u8], offset: usize, count: usize) -> Result<Vec<f64>> {
    let expected = count
        .checked_mul(8)
        .ok_or_else(|| SgfmError::Header("payload size overflows".into()))?;
    let found = bytes.len() - offset;
    if found != expected {
        return Err(SgfmError::TruncatedPayload { expected, found });
    }
    Ok(bytes[offset..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn encode_field(f: &Field) -> Vec<u8> {
    let g = f.grid();
    let dims = vec![g.n() as u32; g.ndim()];
    encode(FIELD_MAGIC, &dims, f.channels() as u32, f.data())
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    let h = decode_header(bytes, FIELD_MAGIC)?;
    let n = *h.dims.first().ok_or_else(|| SgfmError::Header("no dimensions".into()))?;
    if h.dims.iter().any(|d| *d != n) {
        return Err(SgfmError::Header(format!("only cubic grids are supported, got {:?}", h.dims)));
    }
    if h.channels == 0 {
        return Err(SgfmError::Header("zero channels".into()));
    }
    let grid = Grid::new(h.dims.len(), n as usize).map_err(|e| SgfmError::Header(e.to_string()))?;
    let count = grid.len() * h.channels as usize;
    let data = decode_payload(bytes, h.payload_offset, count)?;
    Field::from_vec(grid, h.channels as usize, data)
}

pub fn write_field(path: impl AsRef<Path>, f: &Field) -> Result<()> {
    write_atomic(path.as_ref(), &encode_field(f))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<Field> {
    decode_field(&fs::read(path)?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn encode_checkpoint(model: &LocalScoreNet) -> Vec<u8> {
    let a = model.arch();
    let s = model.schedule();
    let dims = [a.ndim as u32, a.hidden as u32, a.lambda_dim as u32, a.param_count() as u32];
    let mut payload = vec![s.beta_min, s.beta_max];
    payload.extend_from_slice(model.params());
    encode(CHECKPOINT_MAGIC, &dims, 1, &payload)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<LocalScoreNet> {
    let h = decode_header(bytes, CHECKPOINT_MAGIC)?;
    if h.dims.len() != 4 || h.channels != 1 {
        return Err(SgfmError::Header("checkpoint descriptor must have four entries and one channel".into()));
    }
    let arch = LocalScoreArch {
        ndim: h.dims[0] as usize,
        hidden: h.dims[1] as usize,
        lambda_dim: h.dims[2] as usize,
    };
    if arch.param_count() != h.dims[3] as usize {
        return Err(SgfmError::Header(format!(
            "descriptor claims {} parameters, architecture has {}",
            h.dims[3],
            arch.param_count()
        )));
    }
    let payload = decode_payload(bytes, h.payload_offset, 2 + arch.param_count())?;
    let schedule = NoiseSchedule::new(payload[0], payload[1]).map_err(|e| SgfmError::Header(e.to_string()))?;
    LocalScoreNet::from_params(arch, schedule, payload[2..].to_vec())
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &LocalScoreNet) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(model))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<LocalScoreNet> {
    decode_checkpoint(&fs::read(path)?)
}

/// Sidecar metadata of a trajectory directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub dt: f64,
    pub times: Vec<f64>,
    pub files: Vec<String>,
    /// Free-form description of how the trajectory was produced.
    #[serde(default)]
    pub source: serde_json::Value,
}

pub const TRAJECTORY_META: &str = "trajectory.json";

/// Writes one field file per snapshot plus `trajectory.json`.
pub fn write_trajectory(dir: impl AsRef<Path>, traj: &Trajectory, source: serde_json::Value) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(traj.len());
    for (k, s) in traj.snapshots().iter().enumerate() {
        let name = format!("snapshot_{k:06}.sgff");
        write_field(dir.join(&name), s)?;
        files.push(name);
    }
    let meta = TrajectoryMeta {
        dt: traj.dt(),
        times: traj.times().to_vec(),
        files,
        source,
    };
    write_atomic(&dir.join(TRAJECTORY_META), serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn read_trajectory(dir: impl AsRef<Path>) -> Result<(Trajectory, TrajectoryMeta)> {
    let dir = dir.as_ref();
    let meta: TrajectoryMeta = serde_json::from_slice(&fs::read(dir.join(TRAJECTORY_META))?)?;
    if meta.files.is_empty() || meta.files.len() != meta.times.len() {
        return Err(SgfmError::Header("trajectory metadata lists no snapshots or mismatched times".into()));
    }
    let mut traj = Trajectory::new(meta.dt, meta.times[0], read_field(dir.join(&meta.files[0]))?)?;
    for name in &meta.files[1..] {
        traj.push(read_field(dir.join(name))?)?;
    }
    Ok((traj, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gaussian_field, make_grid};

    #[test]
    fn field_round_trip_is_bit_exact() {
        for (d, n, c) in [(2, 8, 1), (2, 16, 2), (3, 4, 3)] {
            let f = gaussian_field(make_grid(d, n).unwrap(), c, 7);
            let back = decode_field(&encode_field(&f)).unwrap();
            assert_eq!(back, f);
            assert!(back.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn header_errors_are_distinct() {
        let f = gaussian_field(make_grid(2, 8).unwrap(), 2, 1);
        let good = encode_field(&f);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_field(&bad), Err(SgfmError::MagicMismatch { .. })));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decode_field(&bad), Err(SgfmError::VersionMismatch { found: 9, .. })));

        let bad = &good[..good.len() - 5];
        assert!(matches!(decode_field(bad), Err(SgfmError::TruncatedPayload { .. })));

        assert!(matches!(decode_field(&good[..6]), Err(SgfmError::Header(_))));
        assert!(matches!(
            decode_checkpoint(&good),
            Err(SgfmError::MagicMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let arch = LocalScoreArch {
            ndim: 2,
            hidden: 5,
            lambda_dim: 1,
        };
        let net = LocalScoreNet::new(arch, NoiseSchedule::new(0.2, 15.0).unwrap(), 3).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&net)).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn trajectory_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(2, 8).unwrap();
        let mut t = Trajectory::new(0.1, 0.0, gaussian_field(g, 2, 1)).unwrap();
        t.push(gaussian_field(g, 2, 2)).unwrap();
        write_trajectory(dir.path(), &t, serde_json::json!({"kind": "test"})).unwrap();
        let (back, meta) = read_trajectory(dir.path()).unwrap();
        assert_eq!(back.snapshots(), t.snapshots());
        assert_eq!(meta.times, t.times());
    }
}
