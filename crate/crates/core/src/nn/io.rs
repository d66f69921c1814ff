//! Versioned plain-text weights files.
//!
//! ```text
//! mcvd-weights 1
//! kind angle
//! k 2
//! hidden 256
//! blocks 6
//! dropout 0.1
//! frame canonical
//! seed 7
//! epochs_run 120
//! final_val_loss 1.2345678901234567e-3
//! tensor stem.weight 256 8
//! <one line per row, 17 significant digits>
//! ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::features::Frame;
use super::model::{Arch, ModelKind, ModelWeights, Params, TrainingMeta};
use crate::error::{Error, Result};

const MAGIC: &str = "mcvd-weights";
const VERSION: u32 = 1;

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_text(w: &ModelWeights) -> String {
    let a = &w.arch;
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "kind {}", a.kind.slug());
    let _ = writeln!(s, "k {}", a.k);
    let _ = writeln!(s, "hidden {}", a.hidden);
    let _ = writeln!(s, "blocks {}", a.blocks);
    let _ = writeln!(s, "dropout {}", fmt17(a.dropout));
    let _ = writeln!(s, "frame {}", a.frame.slug());
    let _ = writeln!(s, "seed {}", w.meta.seed);
    let _ = writeln!(s, "epochs_run {}", w.meta.epochs_run);
    let _ = writeln!(s, "final_val_loss {}", fmt17(w.meta.final_val_loss));
    for (name, (data, shape)) in w.params.names().iter().zip(w.params.tensors()) {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "tensor {name} {}", dims.join(" "));
        let row_len = *shape.last().unwrap_or(&1);
        for row in data.chunks(row_len.max(1)) {
            let vals: Vec<String> = row.iter().map(|v| fmt17(*v)).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
    }
    s.push_str("end\n");
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::parse(self.path, "unexpected end of file"))
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let (no, line) = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim()),
            _ => Err(Error::parse(self.path, format!("line {no}: expected `{key} ...`"))),
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        v.parse()
            .map_err(|_| Error::parse(self.path, format!("bad value for `{key}`: {v}")))
    }
}

pub fn from_text(text: &str, path: &Path) -> Result<ModelWeights> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        path,
    };
    let version: u32 = lines.parsed(MAGIC)?;
    if version != VERSION {
        return Err(Error::parse(path, format!("unsupported weights version {version}")));
    }
    let kind = ModelKind::from_slug(lines.field("kind")?)
        .ok_or_else(|| Error::parse(path, "unknown model kind"))?;
    let k = lines.parsed("k")?;
    let hidden = lines.parsed("hidden")?;
    let blocks = lines.parsed("blocks")?;
    let dropout = lines.parsed("dropout")?;
    let frame = Frame::from_slug(lines.field("frame")?)
        .ok_or_else(|| Error::parse(path, "unknown frame"))?;
    let meta = TrainingMeta {
        seed: lines.parsed("seed")?,
        epochs_run: lines.parsed("epochs_run")?,
        final_val_loss: lines.parsed("final_val_loss")?,
    };
    let arch = Arch {
        kind,
        k,
        hidden,
        blocks,
        dropout,
        frame,
    };
    arch.validate().map_err(|e| Error::parse(path, e))?;
    let mut params = Params::zeros(&arch);
    let names = params.names();
    let shapes: Vec<Vec<usize>> = params.tensors().into_iter().map(|(_, s)| s).collect();
    for ((name, shape), dst) in names.iter().zip(&shapes).zip(params.tensors_mut()) {
        let header = lines.field("tensor")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(name.as_str()) {
            return Err(Error::parse(path, format!("expected tensor {name}, found `{header}`")));
        }
        let dims: Vec<usize> = parts
            .map(|d| d.parse().map_err(|_| Error::parse(path, format!("bad dimension in `{header}`"))))
            .collect::<Result<_>>()?;
        if &dims != shape {
            return Err(Error::parse(path, format!("tensor {name}: shape {dims:?}, expected {shape:?}")));
        }
        let row_len = *shape.last().unwrap_or(&1);
        for row in dst.chunks_mut(row_len.max(1)) {
            let (no, line) = lines.next_line()?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::parse(path, format!("line {no}: bad number `{v}`"))))
                .collect::<Result<_>>()?;
            if vals.len() != row.len() {
                return Err(Error::parse(path, format!("line {no}: expected {} values", row.len())));
            }
            row.copy_from_slice(&vals);
        }
    }
    let (no, end) = lines.next_line()?;
    if end.trim() != "end" {
        return Err(Error::parse(path, format!("line {no}: expected `end`")));
    }
    let w = ModelWeights { arch, params, meta };
    w.validate().map_err(|e| Error::parse(path, e))?;
    Ok(w)
}

pub fn save(w: &ModelWeights, path: &Path) -> Result<()> {
    crate::dataset::write_atomic(path, to_text(w).as_bytes())
}

pub fn load(path: &Path) -> Result<ModelWeights> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, path)
}
