//! Text checkpoint of named parameter tensors.
//!
//! Layout (UTF-8, LF line endings):
//!
//! ```text
//! gram-checkpoint<TAB>v1<TAB><f32|f64>
//! <name><TAB><dim>x<dim>...<TAB><v0> <v1> ...
//! ```
//!
//! One line per tensor, values row-major and written in shortest round-trip
//! form, so save followed by load is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::scalar::Scalar;

pub const FORMAT_TAG: &str = "gram-checkpoint";
pub const FORMAT_VERSION: &str = "v1";

/// Render `(prefix, params)` groups into checkpoint text.
pub fn render<T: Scalar>(groups: &[(&str, &dyn ParamSet<T>)]) -> String {
    let mut out = format!("{FORMAT_TAG}\t{FORMAT_VERSION}\t{}\n", T::NAME);
    for (prefix, params) in groups {
        for (name, t) in params.named() {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = write!(out, "{prefix}{name}\t{}\t", shape.join("x"));
            for (k, v) in t.data().iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Parse checkpoint text into `(name, tensor)` pairs in file order.
pub fn parse<T: Scalar>(text: &str, origin: &str) -> Result<Vec<(String, Tensor<T>)>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty checkpoint".into()))?;
    let head: Vec<&str> = header.split('\t').collect();
    if head.len() != 3 || head[0] != FORMAT_TAG {
        return Err(perr(1, format!("bad header {header:?}")));
    }
    if head[1] != FORMAT_VERSION {
        return Err(perr(1, format!("unsupported version {}", head[1])));
    }
    if head[2] != T::NAME {
        return Err(perr(
            1,
            format!(
                "checkpoint precision {} does not match {}",
                head[2],
                T::NAME
            ),
        ));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(name), Some(shape), Some(values), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(perr(lineno, "expected name, shape and values".into()));
        };
        let shape = shape
            .split('x')
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|e| perr(lineno, format!("bad dim {d:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let data = values
            .split(' ')
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| perr(lineno, format!("bad value {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| perr(lineno, e.to_string()))?;
        out.push((name.to_string(), t));
    }
    Ok(out)
}

/// Overwrite `params` from parsed tensors carrying `prefix`. Every parameter
/// must be present with a matching shape.
pub fn restore<T: Scalar>(
    params: &mut dyn ParamSet<T>,
    prefix: &str,
    entries: &[(String, Tensor<T>)],
) -> Result<()> {
    let names: Vec<String> = params
        .named()
        .into_iter()
        .map(|(n, _)| format!("{prefix}{n}"))
        .collect();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let (_, t) = entries
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Lookup(format!("checkpoint lacks {name}")))?;
        if t.shape() != slot.shape() {
            return Err(Error::shape(
                "checkpoint",
                format!("{name}: {:?} vs {:?}", t.shape(), slot.shape()),
            ));
        }
        *slot = t.clone();
    }
    Ok(())
}

pub fn save<T: Scalar>(path: &Path, groups: &[(&str, &dyn ParamSet<T>)]) -> Result<()> {
    std::fs::write(path, render(groups)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, &path.display().to_string())
}
