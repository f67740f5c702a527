//! Binary dataset archive.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! b"HTDS"  u32 version  u32 header_len  header (UTF-8 JSON)  payload
//! ```
//!
//! The header holds the [`DatasetFingerprint`], the window count, the feature
//! counts and a SHA-256 digest of the payload. The payload is the windows in
//! order, each as `f64` values:
//! `state_start, state_end, rho_start, rho_end, i_q, i_phi_u, i_phi_phi,
//! i_vphi_d, i_vphi_vphi` with matrices in column-major order.
//!
//! Encoding is deterministic: equal datasets give byte-identical archives.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::BasisSet;
use crate::collection::{DatasetFingerprint, WindowDataset, WindowStatistics};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HTDS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    fingerprint: DatasetFingerprint,
    n_windows: usize,
    critic_len: usize,
    actor_u_len: usize,
    actor_d_len: usize,
    payload_sha256: String,
}

struct Layout {
    aug: usize,
    l1: usize,
    l2: usize,
    l3: usize,
    m: usize,
    q: usize,
}

impl Layout {
    fn window_len(&self) -> usize {
        2 * self.aug + 2 * self.l1 + 1 + self.l2 * self.m + self.l2 * self.l2 + self.l3 * self.q + self.l3 * self.l3
    }
}

fn layout_of(dataset: &WindowDataset) -> Result<Layout> {
    let fp = &dataset.fingerprint;
    let first = dataset.windows.first().ok_or_else(|| Error::Archive("cannot archive an empty dataset".into()))?;
    Ok(Layout {
        aug: 2 * fp.state_dim,
        l1: first.rho_start.len(),
        l2: first.i_phi_phi.nrows(),
        l3: first.i_vphi_vphi.nrows(),
        m: fp.control_dim,
        q: fp.disturbance_dim,
    })
}

fn check_window(w: &WindowStatistics, lay: &Layout) -> Result<()> {
    let ok = w.state_start.len() == lay.aug
        && w.state_end.len() == lay.aug
        && w.rho_start.len() == lay.l1
        && w.rho_end.len() == lay.l1
        && w.i_phi_u.shape() == (lay.l2, lay.m)
        && w.i_phi_phi.shape() == (lay.l2, lay.l2)
        && w.i_vphi_d.shape() == (lay.l3, lay.q)
        && w.i_vphi_vphi.shape() == (lay.l3, lay.l3);
    if ok {
        Ok(())
    } else {
        Err(Error::Archive("windows have inconsistent shapes".into()))
    }
}

/// Serializes `dataset` to archive bytes.
pub fn encode(dataset: &WindowDataset) -> Result<Vec<u8>> {
    let lay = layout_of(dataset)?;
    let mut payload = Vec::with_capacity(dataset.len() * lay.window_len() * 8);
    for w in &dataset.windows {
        check_window(w, &lay)?;
        let parts: [&[f64]; 8] = [
            w.state_start.as_slice(),
            w.state_end.as_slice(),
            w.rho_start.as_slice(),
            w.rho_end.as_slice(),
            std::slice::from_ref(&w.i_q),
            w.i_phi_u.as_slice(),
            w.i_phi_phi.as_slice(),
            w.i_vphi_d.as_slice(),
        ];
        for v in parts.into_iter().flatten().chain(w.i_vphi_vphi.as_slice()) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        fingerprint: dataset.fingerprint.clone(),
        n_windows: dataset.len(),
        critic_len: lay.l1,
        actor_u_len: lay.l2,
        actor_d_len: lay.l3,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Archive(e.to_string()))?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::Archive("header too large".into()))?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Archive("truncated preamble".into()))
}

/// Parses archive bytes.
pub fn decode(bytes: &[u8]) -> Result<WindowDataset> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::Archive("not a dataset archive (bad magic)".into()));
    }
    let version = read_u32(bytes, 4)?;
    if version != VERSION {
        return Err(Error::Archive(format!("unsupported archive version {version}")));
    }
    let header_len = read_u32(bytes, 8)? as usize;
    let header_bytes = bytes.get(12..12 + header_len).ok_or_else(|| Error::Archive("truncated header".into()))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| Error::Archive(format!("header: {e}")))?;
    let payload = &bytes[12 + header_len..];
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(Error::Archive("payload checksum mismatch".into()));
    }
    let fp = &header.fingerprint;
    let lay = Layout {
        aug: 2 * fp.state_dim,
        l1: header.critic_len,
        l2: header.actor_u_len,
        l3: header.actor_d_len,
        m: fp.control_dim,
        q: fp.disturbance_dim,
    };
    if payload.len() != header.n_windows * lay.window_len() * 8 {
        return Err(Error::Archive(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            header.n_windows * lay.window_len() * 8
        )));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    let mut windows = Vec::with_capacity(header.n_windows);
    for _ in 0..header.n_windows {
        windows.push(WindowStatistics {
            state_start: DVector::from_vec(take(lay.aug)),
            state_end: DVector::from_vec(take(lay.aug)),
            rho_start: DVector::from_vec(take(lay.l1)),
            rho_end: DVector::from_vec(take(lay.l1)),
            i_q: take(1)[0],
            i_phi_u: DMatrix::from_vec(lay.l2, lay.m, take(lay.l2 * lay.m)),
            i_phi_phi: DMatrix::from_vec(lay.l2, lay.l2, take(lay.l2 * lay.l2)),
            i_vphi_d: DMatrix::from_vec(lay.l3, lay.q, take(lay.l3 * lay.q)),
            i_vphi_vphi: DMatrix::from_vec(lay.l3, lay.l3, take(lay.l3 * lay.l3)),
        });
    }
    Ok(WindowDataset { windows, fingerprint: header.fingerprint })
}

pub fn write_dataset(path: &Path, dataset: &WindowDataset) -> Result<()> {
    let bytes = encode(dataset)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<WindowDataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Fails with [`Error::Fingerprint`] unless `dataset` was collected with
/// `basis` and the expected settings.
pub fn check_fingerprint(dataset: &WindowDataset, basis: &BasisSet, expected: &DatasetFingerprint) -> Result<()> {
    let fp = &dataset.fingerprint;
    if fp.basis_hash != basis.ordering_hash() {
        return Err(Error::Fingerprint("basis ordering hash differs".into()));
    }
    let mut diffs = Vec::new();
    if fp.period != expected.period {
        diffs.push(format!("T {} vs {}", fp.period, expected.period));
    }
    if fp.substeps != expected.substeps {
        diffs.push(format!("M {} vs {}", fp.substeps, expected.substeps));
    }
    if fp.alpha != expected.alpha {
        diffs.push(format!("α {} vs {}", fp.alpha, expected.alpha));
    }
    if fp.q_weight != expected.q_weight {
        diffs.push("Q".into());
    }
    if fp.seed != expected.seed {
        diffs.push(format!("seed {} vs {}", fp.seed, expected.seed));
    }
    if (fp.state_dim, fp.control_dim, fp.disturbance_dim)
        != (expected.state_dim, expected.control_dim, expected.disturbance_dim)
    {
        diffs.push("dimensions".into());
    }
    if fp.mode != expected.mode {
        diffs.push("collection mode".into());
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::Fingerprint(format!("dataset differs in: {}", diffs.join(", "))))
    }
}
