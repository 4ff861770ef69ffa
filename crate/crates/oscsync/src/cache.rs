//! On-disk cache of simulated raw grids, keyed by a digest of everything the
//! simulation depends on. Used for the long τ reference maps.

use std::fs;
use std::path::{Path, PathBuf};

use oscsync_core::readout::{GridSpec, RawGrid, ReadoutError, SimProtocol};
use oscsync_core::{Executor, NetworkConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

// bump when the simulation changes in a way the inputs do not capture
const FORMAT: &str = "oscsync-rawgrid-1";

#[derive(Serialize)]
struct Key<'a> {
    format: &'static str,
    network: &'a NetworkConfig,
    protocol: &'a SimProtocol,
    grid: &'a GridSpec,
    master_seed: u64,
    taus: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct GridCache {
    dir: PathBuf,
}

impl GridCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        GridCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Hex SHA-256 of the simulation inputs.
    pub fn key(network: &NetworkConfig, protocol: &SimProtocol, grid: &GridSpec, master_seed: u64, taus: &[f64]) -> String {
        let key = Key { format: FORMAT, network, protocol, grid, master_seed, taus };
        let digest = Sha256::digest(serde_json::to_vec(&key).expect("key serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Loads the grid if cached, otherwise simulates and stores it. Cache
    /// files that fail to load or do not match the request are recomputed;
    /// failing to store only warns.
    pub fn simulate<E: Executor>(
        &self,
        network: &NetworkConfig,
        protocol: &SimProtocol,
        grid: &GridSpec,
        master_seed: u64,
        taus: &[f64],
        exec: &E,
    ) -> Result<RawGrid, ReadoutError> {
        let path = self.path(&Self::key(network, protocol, grid, master_seed, taus));
        if let Some(raw) = load(&path) {
            if raw.network == *network
                && raw.protocol == *protocol
                && raw.grid == *grid
                && raw.master_seed == master_seed
                && raw.taus == taus
            {
                return Ok(raw);
            }
        }
        let raw = RawGrid::simulate(network, protocol, grid, master_seed, taus, exec)?;
        if let Err(e) = store(&path, &raw) {
            eprintln!("warning: could not cache {}: {e}", path.display());
        }
        Ok(raw)
    }
}

fn load(path: &Path) -> Option<RawGrid> {
    let bytes = fs::read(path).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn store(path: &Path, raw: &RawGrid) -> std::io::Result<()> {
    let dir = path.parent().expect("cache files live in a directory");
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, serde_json::to_vec(raw)?)?;
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use oscsync_core::{build_paper_network, PaperTopologySpec, Sequential};

    #[test]
    fn second_call_reads_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let cache = GridCache::new(dir.path().join("nested"));
        let net = build_paper_network(&PaperTopologySpec { noise_fwhm: 1e6, ..Default::default() }).unwrap();
        let protocol = SimProtocol { cooldown: 1e-8, tau: 2e-8, repetitions: 2, ..Default::default() };
        let grid = GridSpec::square(500e6, 600e6, 2);
        let a = cache.simulate(&net, &protocol, &grid, 3, &[2e-8], &Sequential).unwrap();
        let key = GridCache::key(&net, &protocol, &grid, 3, &[2e-8]);
        assert_eq!(key.len(), 64);
        assert!(cache.path(&key).exists());
        assert_ne!(key, GridCache::key(&net, &protocol, &grid, 4, &[2e-8]));
        // a corrupt file is recomputed
        fs::write(cache.path(&key), b"{").unwrap();
        let b = cache.simulate(&net, &protocol, &grid, 3, &[2e-8], &Sequential).unwrap();
        assert_eq!(a, b);
        let c = cache.simulate(&net, &protocol, &grid, 3, &[2e-8], &Sequential).unwrap();
        assert_eq!(a, c);
    }
}
