//! Output files: atomic staged writes, CSV curves, sample dumps and the run
//! manifest.
//!
//! Floats go to CSV as `{:.16e}` (17 significant digits) and to JSON through
//! `serde_json`, whose shortest round-trip form reproduces the same bits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::tails::CurvePoint;
use crate::wbp::Population;

/// Files collected in memory and committed together, so a failing command
/// leaves nothing behind.
#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    /// Writes every file under `dir`, each through a temporary sibling and a
    /// rename.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut temps = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let target = dir.join(name);
            let tmp = dir.join(format!(".{}.tmp-{}", name.display(), std::process::id()));
            let written = fs::File::create(&tmp).and_then(|mut f| {
                f.write_all(bytes)?;
                f.sync_all()
            });
            if let Err(e) = written {
                let _ = fs::remove_file(&tmp);
                for (t, _) in &temps {
                    let _ = fs::remove_file(t);
                }
                return Err(e.into());
            }
            temps.push((tmp, target));
        }
        for (tmp, target) in &temps {
            fs::rename(tmp, target)?;
        }
        Ok(temps.into_iter().map(|(_, t)| t).collect())
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV with a header row; `columns` and every row must have equal length.
pub fn csv(columns: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Vec<u8> {
    let mut out = columns.join(",");
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

/// Plot-ready `t,value,se` curve.
pub fn curve_csv(points: &[CurvePoint]) -> Vec<u8> {
    csv(&["t", "value", "se"], points.iter().map(|p| vec![p.t, p.value, p.se]))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Numerical settings of a run. Threads and the output directory are
/// recorded but left out of the hash, since neither changes any number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub config_hash: String,
    pub seed: u64,
    pub pool_size: Option<usize>,
    pub grid_size: Option<usize>,
    pub population: Option<usize>,
    pub sweeps: Option<u64>,
    pub depth: Option<usize>,
    /// Remaining knobs as `name=value`, in the order given.
    pub extra: Vec<String>,
    pub inputs: Vec<String>,
    pub threads: usize,
    pub out_dir: String,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config_path: &Path, spec: &ModelSpec, seed: u64) -> Self {
        Self {
            command: command.into(),
            config_path: config_path.display().to_string(),
            config_hash: spec.hash(),
            seed,
            pool_size: None,
            grid_size: None,
            population: None,
            sweeps: None,
            depth: None,
            extra: Vec::new(),
            inputs: Vec::new(),
            threads: rayon::current_num_threads(),
            out_dir: String::new(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let fields = [
            self.command.clone(),
            self.config_hash.clone(),
            self.seed.to_string(),
            format!("{:?}", self.pool_size),
            format!("{:?}", self.grid_size),
            format!("{:?}", self.population),
            format!("{:?}", self.sweeps),
            format!("{:?}", self.depth),
            self.extra.join(";"),
            self.inputs.join(";"),
            self.version.clone(),
        ];
        for f in fields {
            h.update(f.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Serialize)]
struct ManifestFile<'a> {
    hash: String,
    #[serde(flatten)]
    manifest: &'a RunManifest,
}

/// Stages `manifest.json` carrying its own hash.
pub fn stage_manifest(staged: &mut Staged, manifest: &RunManifest) -> Result<()> {
    staged.add_json("manifest.json", &ManifestFile { hash: manifest.hash(), manifest })
}

/// Wraps a payload with the manifest hash that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub manifest_hash: String,
    #[serde(flatten)]
    pub payload: T,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub const SAMPLES_FILE: &str = "samples.f64";
pub const SAMPLES_META_FILE: &str = "samples.meta.json";

/// Sidecar of a raw little-endian `f64` sample dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub manifest_hash: String,
    pub spec_hash: String,
    pub seed: u64,
    pub generation: u64,
    pub count: usize,
    pub d: usize,
    pub flagged: usize,
    pub data_sha256: String,
}

pub fn stage_samples(staged: &mut Staged, pop: &Population, manifest_hash: &str) -> Result<()> {
    let mut bytes = Vec::with_capacity(pop.data.len() * 8);
    for v in &pop.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let meta = SampleMeta {
        manifest_hash: manifest_hash.into(),
        spec_hash: pop.spec_hash.clone(),
        seed: pop.seed,
        generation: pop.generation,
        count: pop.len(),
        d: pop.d,
        flagged: pop.flagged,
        data_sha256: sha256_hex(&bytes),
    };
    staged.add(SAMPLES_FILE, bytes);
    staged.add_json(SAMPLES_META_FILE, &meta)
}

/// Loads a dump written by [`stage_samples`] and checks it against `spec`
/// and its recorded digest.
pub fn load_samples(dir: &Path, spec: &ModelSpec) -> Result<(Population, SampleMeta)> {
    let meta: SampleMeta = read_json(&dir.join(SAMPLES_META_FILE))?;
    if meta.spec_hash != spec.hash() {
        return Err(Error::Provenance(format!(
            "samples in {} were simulated for model {}, not {}",
            dir.display(),
            meta.spec_hash,
            spec.hash()
        )));
    }
    let path = dir.join(SAMPLES_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
    if sha256_hex(&bytes) != meta.data_sha256 {
        return Err(Error::Provenance(format!("{} does not match its recorded digest", path.display())));
    }
    if meta.d != spec.d || bytes.len() != meta.count * meta.d * 8 {
        return Err(Error::Provenance(format!("{} has the wrong shape", path.display())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut pop = Population::from_data(spec, data, meta.seed);
    pop.generation = meta.generation;
    pop.flagged = meta.flagged;
    Ok((pop, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec::parse("family=maxwell\nd=3\n").unwrap()
    }

    #[test]
    fn csv_keeps_every_bit() {
        let vals = [0.1, -1.0 / 3.0, 6.02214076e23, f64::MIN_POSITIVE, 1.0 + f64::EPSILON];
        let text = String::from_utf8(csv(&["v"], vals.iter().map(|v| vec![*v]))).unwrap();
        let back: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
        assert_eq!(back, vals);
    }

    proptest::proptest! {
        #[test]
        fn csv_round_trips_any_finite(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let text = String::from_utf8(csv(&["v"], [vec![v]])).unwrap();
            let back: f64 = text.lines().nth(1).unwrap().parse().unwrap();
            proptest::prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn samples_round_trip_and_reject_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec();
        let pop = Population::gaussian(&s, 100, 3);
        let mut staged = Staged::new();
        stage_samples(&mut staged, &pop, "abc").unwrap();
        staged.commit(dir.path()).unwrap();
        let (back, meta) = load_samples(dir.path(), &s).unwrap();
        assert_eq!(back, pop);
        assert_eq!(meta.manifest_hash, "abc");

        let other = ModelSpec::parse("family=maxwell\nd=3\nu.sigma=0.4\n").unwrap();
        assert!(matches!(load_samples(dir.path(), &other), Err(Error::Provenance(_))));

        let path = dir.path().join(SAMPLES_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_samples(dir.path(), &s), Err(Error::Provenance(_))));
    }

    #[test]
    fn manifest_hash_ignores_threads_and_out_dir() {
        let s = spec();
        let mut a = RunManifest::new("simulate", Path::new("m.cfg"), &s, 1);
        let mut b = a.clone();
        b.threads = a.threads + 3;
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        a.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn commit_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut staged = Staged::new();
        staged.add("a.csv", b"x\n".to_vec());
        staged.add_json("b.json", &vec![1.5, 2.0]).unwrap();
        staged.commit(dir.path()).unwrap();
        let mut names: Vec<String> =
            fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        assert_eq!(names, ["a.csv", "b.json"]);
    }
}
