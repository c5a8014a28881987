//! Named parameter traversal, seeded initialization, gradient maps and the
//! on-disk parameter manifest.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Joins a dotted parameter path.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A module owning learnable tensors addressable by dotted names.
///
/// Gradients are stored in a second instance of the same module type, so a
/// module's backward pass accumulates into `&mut Self`.
pub trait Parameterized<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    /// Parameters in traversal order.
    fn flat_params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.push(t.clone()));
        out
    }

    /// A copy whose parameters are replaced, in traversal order, by `values`.
    fn with_flat_params(&self, values: &[Tensor<T>]) -> Result<Self>
    where
        Self: Clone + Sized,
    {
        let mut m = self.clone();
        let mut it = values.iter();
        let mut err = None;
        m.visit_mut("", &mut |name, p| match it.next() {
            Some(v) if v.shape() == p.shape() => *p = v.clone(),
            Some(v) if err.is_none() => err = Some(Error::invalid("with_flat_params", format!("{name}: expected {:?}, got {:?}", p.shape(), v.shape()))),
            None if err.is_none() => err = Some(Error::invalid("with_flat_params", format!("missing value for {name}"))),
            _ => {}
        });
        if let Some(e) = err {
            return Err(e);
        }
        if it.next().is_some() {
            return Err(Error::invalid("with_flat_params", "more values than parameters"));
        }
        Ok(m)
    }

    /// A copy with every parameter zeroed, used as a gradient accumulator.
    fn zeroed(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.fill(T::zero()));
        z
    }

    /// Plain gradient descent: `p -= lr · g` for every parameter.
    fn sgd_step(&mut self, grads: &Self, lr: T)
    where
        Self: Sized,
    {
        let mut gs = Vec::new();
        grads.visit("", &mut |_, t| gs.push(t.clone()));
        let mut it = gs.into_iter();
        self.visit_mut("", &mut |name, p| {
            let g = it.next().unwrap_or_else(|| panic!("gradient missing for {name}"));
            p.axpy(-lr, &g).expect("gradient shape matches parameter");
        });
    }
}

/// Gradient tensors keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Collects a gradient accumulator, checking it mirrors `params`.
    pub fn collect<M: Parameterized<T>>(params: &M, grads: &M) -> Result<Self> {
        let mut shapes = BTreeMap::new();
        params.visit("", &mut |n, t| {
            shapes.insert(n, t.shape().to_vec());
        });
        let mut entries = BTreeMap::new();
        grads.visit("", &mut |n, t| {
            entries.insert(n, t.clone());
        });
        if shapes.len() != entries.len() {
            return Err(Error::invalid("gradients", "parameter/gradient key sets differ"));
        }
        for (name, shape) in &shapes {
            match entries.get(name) {
                Some(g) if g.shape() == &shape[..] => {}
                Some(g) => return Err(Error::shape("gradients", shape, g.shape())),
                None => return Err(Error::invalid("gradients", format!("missing {name}"))),
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Deterministic parameter initializer: uniform in `[-s, s]`, `s = 1/√fan_in`.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let s = 1.0 / (fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape, |_| T::of(self.rng.gen_range(-s..=s)))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

pub const MANIFEST_FORMAT: &str = "calibnet-params/1";
pub const MANIFEST_FILE: &str = "params.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

/// JSON index of a parameter directory; each tensor lives in its own text file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub format: String,
    #[serde(default)]
    pub config: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

/// Writes every parameter of `module` into `dir` plus a `params.json` index.
pub fn save_params<T: Scalar, M: Parameterized<T>>(
    module: &M,
    config: serde_json::Value,
    dir: &Path,
) -> Result<ParamManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::new();
    let mut failure = None;
    module.visit("", &mut |name, t| {
        if failure.is_some() {
            return;
        }
        let file = format!("{name}.txt");
        if let Err(e) = t.save(&dir.join(&file)) {
            failure = Some(e);
        }
        params.push(ParamEntry {
            name,
            shape: t.shape().to_vec(),
            file,
        });
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let manifest = ParamManifest {
        format: MANIFEST_FORMAT.into(),
        config,
        params,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<ParamManifest> {
    let path = dir.join(MANIFEST_FILE);
    let src = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ParamManifest = serde_json::from_str(&src)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Parse(format!(
            "unsupported parameter manifest format `{}`",
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Overwrites the parameters of `module` from a directory written by
/// [`save_params`]. Every parameter must be present with a matching shape.
pub fn load_params<T: Scalar, M: Parameterized<T>>(module: &mut M, dir: &Path) -> Result<()> {
    let manifest = read_manifest(dir)?;
    let by_name: BTreeMap<_, _> = manifest.params.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut failure = None;
    module.visit_mut("", &mut |name, t| {
        if failure.is_some() {
            return;
        }
        let loaded = match by_name.get(name.as_str()) {
            None => Err(Error::invalid("load_params", format!("missing parameter {name}"))),
            Some(entry) => Tensor::<T>::load(&dir.join(&entry.file)),
        };
        match loaded {
            Ok(v) if v.shape() == t.shape() => *t = v,
            Ok(v) => failure = Some(Error::shape("load_params", t.shape(), v.shape())),
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
