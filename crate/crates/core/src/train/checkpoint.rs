//! `SFCK` checkpoint files.
//!
//! Layout (integers little-endian): magic `SFCK`, `u16` version, then
//! sections `tag[4] u64:len payload`:
//!
//! * `CONF` — canonical `key = value` text: architecture, labels, seed;
//! * `META` — the same text format: completed epochs and loss history;
//! * `PARM` — `u32` count, then `name` and a length-prefixed TNSR tensor each;
//! * `OPTS` — Adam hyperparameters and per-parameter `(step, m, v)`.
//!
//! Strings are `u32` length + UTF-8. Floats in text use Rust's shortest
//! round-trip formatting, so every value reloads bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use super::adam::{Adam, Moments};
use super::model::{EpochLog, ModelBundle, ModelKind, ModelSpec, Progress};
use crate::error::{Error, Result};
use crate::kv::{join_list, KeyValues};
use crate::tensor::io::{read_tensor, write_tensor, DType};
use crate::tensor::{Parameters, Tensor};

const MAGIC: &[u8; 4] = b"SFCK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    section(&mut out, b"CONF", conf_text(bundle)?.as_bytes());
    section(&mut out, b"META", meta_text(&bundle.progress).as_bytes());

    let mut parm = Vec::new();
    let named = bundle.named("");
    parm.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in &named {
        put_str(&mut parm, name);
        put_tensor(&mut parm, t)?;
    }
    section(&mut out, b"PARM", &parm);

    let opt = &bundle.optimizer;
    let mut opts = Vec::new();
    for v in [opt.beta1, opt.beta2, opt.eps] {
        opts.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    opts.extend_from_slice(&(opt.state.len() as u32).to_le_bytes());
    for (name, m) in &opt.state {
        put_str(&mut opts, name);
        opts.extend_from_slice(&m.step.to_le_bytes());
        put_tensor(&mut opts, &Tensor::new(&[m.m.len()], m.m.clone())?)?;
        put_tensor(&mut opts, &Tensor::new(&[m.v.len()], m.v.clone())?)?;
    }
    section(&mut out, b"OPTS", &opts);
    Ok(out)
}

pub fn save_checkpoint(bundle: &ModelBundle, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(bundle)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::Input { path: path.to_path_buf(), msg: e.to_string() })?;
    read_checkpoint(&bytes)
}

/// Parses a whole checkpoint; nothing is returned unless every section is valid.
pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("checkpoint: bad magic, expected SFCK"));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("checkpoint: unsupported version {version}")));
    }
    let mut sections: BTreeMap<[u8; 4], &[u8]> = BTreeMap::new();
    while r.pos < bytes.len() {
        let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let len = r.u64()? as usize;
        sections.insert(tag, r.take(len)?);
    }
    let get = |tag: &[u8; 4]| {
        sections
            .get(tag)
            .copied()
            .ok_or_else(|| Error::format(format!("checkpoint: missing section {}", String::from_utf8_lossy(tag))))
    };

    let mut bundle = parse_conf(utf8(get(b"CONF")?)?)?;
    bundle.progress = parse_meta(utf8(get(b"META")?)?)?;

    let mut pr = Reader { buf: get(b"PARM")?, pos: 0 };
    let count = pr.u32()? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..count {
        let name = pr.string()?;
        params.insert(name, pr.tensor()?);
    }
    let mut failure = None;
    bundle.visit_mut("", &mut |name, t| match params.remove(&name) {
        Some(p) if p.shape() == t.shape() => *t = p.into_leaf(true),
        Some(p) => {
            failure.get_or_insert(format!("parameter {name}: shape {:?}, expected {:?}", p.shape(), t.shape()));
        }
        None => {
            failure.get_or_insert(format!("parameter {name} missing"));
        }
    });
    if let Some(extra) = params.keys().next() {
        failure.get_or_insert(format!("unexpected parameter {extra}"));
    }
    if let Some(f) = failure {
        return Err(Error::format(format!("checkpoint: {f}")));
    }

    let mut or = Reader { buf: get(b"OPTS")?, pos: 0 };
    let mut opt = Adam {
        beta1: f64::from_bits(or.u64()?),
        beta2: f64::from_bits(or.u64()?),
        eps: f64::from_bits(or.u64()?),
        state: BTreeMap::new(),
    };
    for _ in 0..or.u32()? {
        let name = or.string()?;
        let step = or.u64()?;
        let m = or.tensor()?.to_vec();
        let v = or.tensor()?.to_vec();
        opt.state.insert(name, Moments { m, v, step });
    }
    bundle.optimizer = opt;
    Ok(bundle)
}

fn conf_text(b: &ModelBundle) -> Result<String> {
    if let Some(bad) = b.labels.iter().find(|l| l.is_empty() || l.contains([',', '\n', '#'])) {
        return Err(Error::format(format!("label name {bad:?} cannot be stored")));
    }
    let mut kv = KeyValues::new();
    b.spec.write_kv(&mut kv);
    kv.set("labels.names", b.labels.join(","));
    kv.set("labels.indices", join_list(&b.label_indices));
    kv.set("seed", b.seed);
    Ok(kv.to_text())
}

fn parse_conf(text: &str) -> Result<ModelBundle> {
    let mut kv = KeyValues::parse(text, "checkpoint CONF").map_err(|e| Error::format(e.to_string()))?;
    let inner = |kv: &mut KeyValues| -> Result<ModelBundle> {
        let kind: ModelKind = kv.require("model.kind")?;
        let spec = ModelSpec::desk(kind).overlay_kv(kv)?;
        let labels: Vec<String> = kv.require::<String>("labels.names")?.split(',').map(str::to_string).collect();
        let indices: Vec<usize> = kv.get_list("labels.indices")?.unwrap_or_default();
        let seed = kv.require("seed")?;
        kv.reject_unknown()?;
        ModelBundle::build(&spec, labels, indices, seed)
    };
    inner(&mut kv).map_err(|e| match e {
        Error::Format(_) => e,
        other => Error::format(format!("checkpoint CONF: {other}")),
    })
}

fn meta_text(p: &Progress) -> String {
    let mut kv = KeyValues::new();
    kv.set("stage1_epochs", p.stage1_epochs);
    kv.set("stage2_epochs", p.stage2_epochs);
    kv.set("history.len", p.history.len());
    for (i, h) in p.history.iter().enumerate() {
        let val = h.val_loss.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        kv.set(&format!("history.{i}"), format!("{},{},{},{val}", h.stage, h.epoch, h.train_loss));
    }
    kv.to_text()
}

fn parse_meta(text: &str) -> Result<Progress> {
    let bad = |what: &str| Error::format(format!("checkpoint META: {what}"));
    let mut kv = KeyValues::parse(text, "checkpoint META").map_err(|e| bad(&e.to_string()))?;
    let mut p = Progress {
        stage1_epochs: kv.require("stage1_epochs").map_err(|e| bad(&e.to_string()))?,
        stage2_epochs: kv.require("stage2_epochs").map_err(|e| bad(&e.to_string()))?,
        history: Vec::new(),
    };
    let n: usize = kv.require("history.len").map_err(|e| bad(&e.to_string()))?;
    for i in 0..n {
        let line: String = kv.require(&format!("history.{i}")).map_err(|e| bad(&e.to_string()))?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(&format!("history entry {i}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("history entry {i}")));
        p.history.push(EpochLog {
            stage: f[0].parse().map_err(|_| bad("stage"))?,
            epoch: f[1].parse().map_err(|_| bad("epoch"))?,
            train_loss: num(f[2])?,
            val_loss: if f[3] == "-" { None } else { Some(num(f[3])?) },
        });
    }
    kv.reject_unknown().map_err(|e| bad(&e.to_string()))?;
    Ok(p)
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(t, DType::F64, &mut buf)?;
    out.extend_from_slice(&(buf.len() as u64).to_le_bytes());
    out.extend_from_slice(&buf);
    Ok(())
}

fn utf8(b: &[u8]) -> Result<&str> {
    std::str::from_utf8(b).map_err(|_| Error::format("checkpoint: section is not UTF-8"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::format(format!("checkpoint truncated: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("checkpoint: name is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let n = self.u64()? as usize;
        read_tensor(self.take(n)?)
    }
}
