//! Binary checkpoint: `PMKG1` header, step, best MRR, config text,
//! vocabularies, then named little-endian `f64` tensors.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::kg::Kg;
use crate::model::ModelParams;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 5] = b"PMKG1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub best_mrr: f64,
    pub config: Config,
    pub entities: Vec<String>,
    /// Background relations, in table row order.
    pub relations: Vec<String>,
    pub params: ModelParams,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn strings(&mut self, v: &[String]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|s| self.str(s));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (self.bytes.len() - self.pos) as u64 {
            return Err(Error::Checkpoint(format!("implausible length {n} at byte {}", self.pos)));
        }
        Ok(n as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(format!("invalid UTF-8: {e}")))
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.len()?;
        (0..n).map(|_| self.str()).collect()
    }
}

impl Checkpoint {
    pub fn new(config: &Config, kg: &Kg, params: ModelParams, step: u64, best_mrr: f64) -> Self {
        Self {
            step,
            best_mrr,
            config: config.clone(),
            entities: kg.entities().names().to_vec(),
            relations: kg.relations().names()[..kg.num_background_relations()].to_vec(),
            params,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.u64(self.step);
        w.f64(self.best_mrr);
        w.str(&self.config.to_text());
        w.strings(&self.entities);
        w.strings(&self.relations);
        let tensors = self.params.named_tensors();
        w.u64(tensors.len() as u64);
        for (name, t) in tensors {
            w.str(&name);
            w.u64(t.shape().len() as u64);
            t.shape().iter().for_each(|&d| w.u64(d as u64));
            t.data().iter().for_each(|&v| w.f64(v));
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("missing PMKG1 header".into()));
        }
        let step = r.u64()?;
        let best_mrr = r.f64()?;
        let config = Config::parse(&r.str()?)?;
        let entities = r.strings()?;
        let relations = r.strings()?;
        let count = r.len()?;
        let mut tensors = HashMap::with_capacity(count);
        for _ in 0..count {
            let name = r.str()?;
            let ndim = r.len()?;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<usize>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?;
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let d = tensors
            .get("relation_projection")
            .map(Tensor::len)
            .ok_or_else(|| Error::Checkpoint("missing relation_projection".into()))?;
        let mut params = ModelParams::random(&config, entities.len(), relations.len(), d, &mut ChaCha8Rng::seed_from_u64(0));
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != tensors.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", names.len(), tensors.len())));
        }
        for name in names {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            *params.tensor_mut(&name).expect("own name") = t;
        }
        params.validate()?;
        Ok(Self {
            step,
            best_mrr,
            config,
            entities,
            relations,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Fails unless `kg` has the same entity and background relation names.
    pub fn check_vocab(&self, kg: &Kg) -> Result<()> {
        if kg.entities().names() != self.entities.as_slice() {
            return Err(Error::VocabMismatch(format!(
                "checkpoint has {} entities, dataset has {}",
                self.entities.len(),
                kg.num_entities()
            )));
        }
        if &kg.relations().names()[..kg.num_background_relations()] != self.relations.as_slice() {
            return Err(Error::VocabMismatch("background relations differ".into()));
        }
        Ok(())
    }
}
