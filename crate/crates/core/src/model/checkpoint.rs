//! Binary checkpoints.
//!
//! Layout (little-endian): the 8-byte magic `IVAEAR01`, a `u32` version, a
//! `u32`-length-prefixed UTF-8 record of `key=value` lines describing the
//! model, then for each of encoder, decoder and auxiliary network the layer
//! count followed by `(rows, cols)` and the row-major weights then biases of
//! every layer. A trailing FNV-1a hash of everything before it detects
//! corruption.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::IVaeArModel;
use crate::auxdata::{AuxiliaryEncoder, AuxiliarySpec, Standardizer};
use crate::neuralnet::{Activation, NetworkParams, OutputHead};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IVAEAR01";
pub const CHECKPOINT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn heads_tag(heads: &[OutputHead]) -> String {
    heads
        .iter()
        .map(|h| format!("{}:{}", h.activation.tag(), h.width))
        .collect::<Vec<_>>()
        .join(",")
}

fn config_record(m: &IVaeArModel) -> String {
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    line("observed_dim", m.observed_dim.to_string());
    line("latent_dim", m.latent_dim.to_string());
    line("ar_order", m.ar_order.to_string());
    line("aux_dim", m.aux_dim.to_string());
    line("beta", m.beta.to_string());
    for (name, net) in [("encoder", &m.encoder), ("decoder", &m.decoder), ("auxnet", &m.auxnet)] {
        line(&format!("{name}.hidden_activation"), net.hidden_activation.tag().into());
        line(&format!("{name}.heads"), heads_tag(&net.heads));
    }
    line("x.mean", join(&m.x_standardizer.mean));
    line("x.scale", join(&m.x_standardizer.scale));
    line(
        "trained_until",
        m.trained_until.map_or("none".into(), |t| t.to_string()),
    );
    match &m.aux_encoder {
        None => line("aux.kind", "none".into()),
        Some(enc) => {
            line("aux.kind", enc.spec.kind().into());
            match &enc.spec {
                AuxiliarySpec::Rbf {
                    spatial_levels,
                    temporal_levels,
                } => {
                    line("aux.spatial_levels", join(spatial_levels));
                    line("aux.temporal_levels", join(temporal_levels));
                }
                AuxiliarySpec::Segmentation { grid, segment_len } => {
                    line("aux.grid", grid.to_string());
                    line("aux.segment_len", segment_len.to_string());
                }
                AuxiliarySpec::Seasonal {
                    spatial_levels,
                    temporal_levels,
                    period,
                    year_breaks,
                } => {
                    line("aux.spatial_levels", join(spatial_levels));
                    line("aux.temporal_levels", join(temporal_levels));
                    line("aux.period", period.to_string());
                    line("aux.year_breaks", join(year_breaks));
                }
            }
            line("aux.time_range", format!("{},{}", enc.time_range.0, enc.time_range.1));
            line("aux.mean", join(&enc.standardizer.mean));
            line("aux.scale", join(&enc.standardizer.scale));
        }
    }
    s
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serialize `model` to bytes.
pub fn write_checkpoint(model: &IVaeArModel) -> Result<Vec<u8>> {
    model.validate()?;
    let record = config_record(model);
    let mut out = Vec::with_capacity(16 + record.len() + 8 * model.num_params() + 256);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, record.len());
    out.extend_from_slice(record.as_bytes());
    for net in [&model.encoder, &model.decoder, &model.auxnet] {
        put_u32(&mut out, net.num_layers());
        for (w, b) in net.weights.iter().zip(&net.biases) {
            put_u32(&mut out, w.nrows());
            put_u32(&mut out, w.ncols());
            for v in w.iter().chain(b.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let hash = fnv1a(&out);
    out.extend_from_slice(&hash.to_le_bytes());
    Ok(out)
}

pub fn checkpoint_save(model: &IVaeArModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_checkpoint(model)?)?;
    Ok(())
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<IVaeArModel> {
    read_checkpoint(&std::fs::read(path)?)
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::CheckpointFormat(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(fmt_err("unexpected end of checkpoint"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| fmt_err("size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

struct Record(BTreeMap<String, String>);

impl Record {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt_err(format!("malformed record line {line:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        Ok(Self(map))
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| fmt_err(format!("missing record key {key}")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| fmt_err(format!("bad value for {key}")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.get(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|p| p.parse().map_err(|_| fmt_err(format!("bad value for {key}"))))
            .collect()
    }

    fn heads(&self, key: &str) -> Result<Vec<OutputHead>> {
        self.get(key)?
            .split(',')
            .map(|h| {
                let (tag, width) = h.split_once(':').ok_or_else(|| fmt_err("bad head"))?;
                Ok(OutputHead {
                    activation: Activation::from_tag(tag).ok_or_else(|| fmt_err("bad head tag"))?,
                    width: width.parse().map_err(|_| fmt_err("bad head width"))?,
                })
            })
            .collect()
    }
}

fn read_network(cur: &mut Cursor<'_>, rec: &Record, name: &str) -> Result<NetworkParams> {
    let layers = cur.u32()?;
    if layers == 0 || layers > 1024 {
        return Err(fmt_err(format!("{name}: implausible layer count {layers}")));
    }
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    let mut sizes = Vec::with_capacity(layers + 1);
    for l in 0..layers {
        let (rows, cols) = (cur.u32()?, cur.u32()?);
        if l == 0 {
            sizes.push(cols);
        } else if sizes[l] != cols {
            return Err(fmt_err(format!("{name}: layer {l} input width mismatch")));
        }
        sizes.push(rows);
        let w = cur.f64s(rows * cols)?;
        let b = cur.f64s(rows)?;
        weights.push(Array2::from_shape_vec((rows, cols), w).unwrap());
        biases.push(Array1::from(b));
    }
    let net = NetworkParams {
        layer_sizes: sizes,
        weights,
        biases,
        hidden_activation: Activation::from_tag(rec.get(&format!("{name}.hidden_activation"))?)
            .ok_or_else(|| fmt_err("bad activation tag"))?,
        heads: rec.heads(&format!("{name}.heads"))?,
    };
    net.validate().map_err(|e| fmt_err(format!("{name}: {e}")))?;
    Ok(net)
}

fn read_aux(rec: &Record) -> Result<Option<AuxiliaryEncoder>> {
    let spec = match rec.get("aux.kind")? {
        "none" => return Ok(None),
        "rbf" => AuxiliarySpec::Rbf {
            spatial_levels: rec.list("aux.spatial_levels")?,
            temporal_levels: rec.list("aux.temporal_levels")?,
        },
        "segmentation" => AuxiliarySpec::Segmentation {
            grid: rec.num("aux.grid")?,
            segment_len: rec.num("aux.segment_len")?,
        },
        "seasonal" => AuxiliarySpec::Seasonal {
            spatial_levels: rec.list("aux.spatial_levels")?,
            temporal_levels: rec.list("aux.temporal_levels")?,
            period: rec.num("aux.period")?,
            year_breaks: rec.list("aux.year_breaks")?,
        },
        other => return Err(fmt_err(format!("unknown auxiliary kind {other:?}"))),
    };
    let range: Vec<i64> = rec.list("aux.time_range")?;
    if range.len() != 2 {
        return Err(fmt_err("aux.time_range needs two values"));
    }
    Ok(Some(AuxiliaryEncoder {
        spec,
        time_range: (range[0], range[1]),
        standardizer: Standardizer {
            mean: rec.list("aux.mean")?,
            scale: rec.list("aux.scale")?,
        },
    }))
}

/// Parse bytes written by [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<IVaeArModel> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    if bytes.len() < 12 + 8 {
        return Err(fmt_err("truncated checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(fmt_err("checksum mismatch (corrupted or truncated file)"));
    }
    let mut cur = Cursor { bytes: body, pos: 12 };
    let len = cur.u32()?;
    let text = std::str::from_utf8(cur.take(len)?).map_err(|_| fmt_err("record is not UTF-8"))?;
    let rec = Record::parse(text)?;

    let encoder = read_network(&mut cur, &rec, "encoder")?;
    let decoder = read_network(&mut cur, &rec, "decoder")?;
    let auxnet = read_network(&mut cur, &rec, "auxnet")?;
    if cur.pos != body.len() {
        return Err(fmt_err("trailing bytes after the networks"));
    }
    let trained_until = match rec.get("trained_until")? {
        "none" => None,
        _ => Some(rec.num("trained_until")?),
    };
    let model = IVaeArModel {
        encoder,
        decoder,
        auxnet,
        observed_dim: rec.num("observed_dim")?,
        latent_dim: rec.num("latent_dim")?,
        ar_order: rec.num("ar_order")?,
        aux_dim: rec.num("aux_dim")?,
        beta: rec.num("beta")?,
        x_standardizer: Standardizer {
            mean: rec.list("x.mean")?,
            scale: rec.list("x.scale")?,
        },
        aux_encoder: read_aux(&rec)?,
        trained_until,
    };
    model.validate().map_err(|e| fmt_err(e.to_string()))?;
    Ok(model)
}
