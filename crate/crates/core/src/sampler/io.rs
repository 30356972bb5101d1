//! On-disk layout of a fitted chain.
//!
//! A run directory holds `samples.bin` (every retained draw), plus
//! `log_posterior.csv`, `acceptance.csv` and `config.json` (configuration,
//! prior and acceptance ledger).
//!
//! `samples.bin` is little-endian: the 8-byte magic, a `u32` version, then
//! `n`, `p`, `dim` and the sample count as `u64`, then for every sample its
//! iteration (`u64`) followed by `log_posterior`, `sigma_z^2`, `beta` (`p`),
//! `theta` (`n`) and `z` (`n * dim`, row-major) as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AcceptanceLedger, ChainOutput, ChainSample, SamplerConfig};
use crate::error::{Error, Result};
use crate::likelihood::{LatentConfiguration, ModelState, PriorConfig};

pub const SAMPLES_MAGIC: &[u8; 8] = b"DLSJMCHN";
pub const SAMPLES_VERSION: u32 = 1;

pub const SAMPLES_FILE: &str = "samples.bin";
pub const CHAIN_FILE: &str = "config.json";
pub const LOGPOST_FILE: &str = "log_posterior.csv";
pub const ACCEPTANCE_FILE: &str = "acceptance.csv";

#[derive(Serialize, Deserialize)]
struct ChainMeta {
    n: usize,
    p: usize,
    config: SamplerConfig,
    prior: PriorConfig,
    ledger: AcceptanceLedger,
}

pub fn write_samples<W: Write>(chain: &ChainOutput, w: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(SAMPLES_MAGIC)?;
    w.write_all(&SAMPLES_VERSION.to_le_bytes())?;
    for v in [chain.n, chain.p, chain.dim(), chain.samples.len()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for s in &chain.samples {
        w.write_all(&(s.iteration as u64).to_le_bytes())?;
        let st = &s.state;
        let head = [s.log_posterior, st.sigma_z_sq];
        let values = head
            .iter()
            .chain(&st.beta)
            .chain(&st.theta)
            .chain(st.z.as_slice());
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Reads `samples.bin`, returning `(n, p, dim, samples)`.
pub fn read_samples<R: Read>(r: R, path: &Path) -> Result<(usize, usize, usize, Vec<ChainSample>)> {
    let mut r = BufReader::new(r);
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let io = |e: std::io::Error| Error::io(format!("reading {}", path.display()), e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != SAMPLES_MAGIC {
        return Err(bad("not a samples file"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
    if u32::from_le_bytes(b4) != SAMPLES_VERSION {
        return Err(bad("unsupported version"));
    }
    let mut u64s = [0usize; 4];
    let mut b8 = [0u8; 8];
    for v in &mut u64s {
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        *v = u64::from_le_bytes(b8) as usize;
    }
    let [n, p, dim, count] = u64s;
    if n < 2 || p < 2 || dim == 0 {
        return Err(bad("invalid dimensions"));
    }
    let per = 2 + p + n + n * dim;
    let mut buf = vec![0u8; 8 * per];
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        r.read_exact(&mut b8).map_err(|_| bad("truncated sample"))?;
        let iteration = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut buf).map_err(|_| bad("truncated sample"))?;
        let v: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let z = LatentConfiguration::new(n, dim, v[2 + p + n..].to_vec())
            .map_err(|_| bad("non-finite latent position"))?;
        samples.push(ChainSample {
            iteration,
            log_posterior: v[0],
            state: ModelState {
                sigma_z_sq: v[1],
                beta: v[2..2 + p].to_vec(),
                theta: v[2 + p..2 + p + n].to_vec(),
                z,
            },
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok((n, p, dim, samples))
}

pub fn save_chain(chain: &ChainOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join(SAMPLES_FILE);
    let f = File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_samples(chain, f).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;

    let meta = ChainMeta {
        n: chain.n,
        p: chain.p,
        config: chain.config.clone(),
        prior: chain.prior,
        ledger: chain.ledger.clone(),
    };
    let path = dir.join(CHAIN_FILE);
    let f = File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &meta)?;

    let mut w = csv::Writer::from_path(dir.join(LOGPOST_FILE))?;
    w.write_record(["iteration", "log_posterior", "sigma_z_sq"])?;
    for s in &chain.samples {
        w.write_record([
            s.iteration.to_string(),
            s.log_posterior.to_string(),
            s.state.sigma_z_sq.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("writing log posterior trace", e))?;

    write_acceptance(&chain.ledger, &dir.join(ACCEPTANCE_FILE))
}

/// One row per closed window and block.
pub fn write_acceptance(ledger: &AcceptanceLedger, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["block", "end_iteration", "phase", "proposals", "accepted", "rate", "jump_sd"])?;
    for r in &ledger.history {
        w.write_record([
            ledger.blocks[r.block].name.clone(),
            r.end_iteration.to_string(),
            r.phase.as_str().to_string(),
            r.proposals.to_string(),
            r.accepted.to_string(),
            r.rate().map_or(String::new(), |v| format!("{v:.6}")),
            r.jump_sd.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_chain(dir: &Path) -> Result<ChainOutput> {
    let path = dir.join(CHAIN_FILE);
    let f = File::open(&path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let meta: ChainMeta = serde_json::from_reader(BufReader::new(f))?;
    let path = dir.join(SAMPLES_FILE);
    let f = File::open(&path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let (n, p, dim, samples) = read_samples(f, &path)?;
    if n != meta.n || p != meta.p || dim != meta.config.dim {
        return Err(Error::Dimension(format!(
            "{} disagrees with {}",
            SAMPLES_FILE, CHAIN_FILE
        )));
    }
    Ok(ChainOutput {
        config: meta.config,
        prior: meta.prior,
        n,
        p,
        samples,
        ledger: meta.ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ItemResponseMatrix;
    use crate::sampler::run_chain;

    #[test]
    fn run_directory_roundtrip() {
        let x = ItemResponseMatrix::from_rows(&[
            [1u8, 0, 1],
            [1, 1, 0],
            [0, 1, 1],
            [1, 1, 1],
            [0, 0, 1],
        ])
        .unwrap();
        let cfg = SamplerConfig {
            n_iterations: 60,
            burn_in: 20,
            thin: 4,
            adapt_window: 10,
            seed: 5,
            ..SamplerConfig::default()
        };
        let chain = run_chain(&x, PriorConfig::default(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_chain(&chain, dir.path()).unwrap();
        let back = load_chain(dir.path()).unwrap();
        assert_eq!(back, chain);
        let lp = std::fs::read_to_string(dir.path().join(LOGPOST_FILE)).unwrap();
        assert_eq!(lp.lines().count(), 11);
    }

    #[test]
    fn truncated_samples_are_rejected() {
        let mut bytes = SAMPLES_MAGIC.to_vec();
        bytes.extend_from_slice(&SAMPLES_VERSION.to_le_bytes());
        for v in [3u64, 2, 2, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 20]);
        let err = read_samples(&bytes[..], Path::new("s.bin")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let err = read_samples(&b"NOTMAGIC"[..], Path::new("s.bin")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
