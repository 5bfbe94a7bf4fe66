//! JSON graph files.
//!
//! ```json
//! {"format": "slimkit_graph_v1", "name": "...", "input_shape": [3, 96, 96],
//!  "classes": ["..."], "notes": "...",
//!  "nodes": [{"id": "stem", "kind": "conv", "attrs": {...}, "inputs": [],
//!             "params": {"weight": {"b64": "..."}, "bias": [0.0, ...]}}],
//!  "outputs": ["head"]}
//! ```
//!
//! Parameter arrays are either inline JSON numbers or `{"b64": ...}` holding
//! little-endian `f64` bytes. Files are always written in the base64 form.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Map, Value};

use super::{GraphModel, NodeSpec, Op};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::runtime::params::{BnParams, ConvAttrs, ConvParams, LayerTensors, PoolAttrs};

pub const GRAPH_FORMAT: &str = "slimkit_graph_v1";

/// Free-form description stored alongside a graph.
pub const NOTES_FIELD: &str = "notes";

pub fn load_graph(path: impl AsRef<Path>) -> Result<GraphModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json_str(&text)
}

pub fn save_graph(model: &GraphModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &to_bytes(model)?)
}

/// Serialized bytes of `model`, as written by [`save_graph`].
pub fn to_bytes(model: &GraphModel) -> Result<Vec<u8>> {
    to_bytes_with_notes(model, None)
}

pub fn to_bytes_with_notes(model: &GraphModel, notes: Option<&str>) -> Result<Vec<u8>> {
    let mut doc = to_value(model);
    if let Some(n) = notes {
        doc[NOTES_FIELD] = json!(n);
    }
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn encode(values: &[f64]) -> Value {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    json!({ "b64": STANDARD.encode(bytes) })
}

pub fn to_value(model: &GraphModel) -> Value {
    let nodes: Vec<Value> = model
        .nodes
        .iter()
        .map(|n| {
            let attrs = match &n.op {
                Op::Conv(a) => json!({
                    "in_ch": a.in_ch, "out_ch": a.out_ch, "kh": a.kh, "kw": a.kw,
                    "stride": a.stride, "pad": a.pad, "bias": a.bias,
                }),
                Op::BatchNorm { channels, eps } => json!({ "channels": channels, "eps": eps }),
                Op::MaxPool(p) => json!({ "kernel": p.kernel, "stride": p.stride, "pad": p.pad }),
                Op::DetectHead {
                    classes,
                    boxes_per_cell,
                } => json!({ "classes": classes, "boxes_per_cell": boxes_per_cell }),
                _ => json!({}),
            };
            let mut obj = json!({
                "id": n.id,
                "kind": n.op.kind(),
                "attrs": attrs,
                "inputs": n.inputs,
            });
            match &n.params {
                Some(LayerTensors::Conv(p)) => {
                    let mut m = Map::new();
                    m.insert("weight".into(), encode(&p.weight));
                    if let Some(b) = &p.bias {
                        m.insert("bias".into(), encode(b));
                    }
                    obj["params"] = Value::Object(m);
                }
                Some(LayerTensors::BatchNorm(p)) => {
                    obj["params"] = json!({
                        "gamma": encode(&p.gamma),
                        "beta": encode(&p.beta),
                        "running_mean": encode(&p.running_mean),
                        "running_var": encode(&p.running_var),
                    });
                }
                None => {}
            }
            obj
        })
        .collect();
    json!({
        "format": GRAPH_FORMAT,
        "name": model.name,
        "input_shape": model.input_shape,
        "classes": model.classes,
        "nodes": nodes,
        "outputs": model.outputs,
    })
}

fn perr(node: &str, field: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        node: node.to_string(),
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn get_usize(obj: &Map<String, Value>, node: &str, field: &str) -> Result<usize> {
    obj.get(field)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| perr(node, field, "expected a non-negative integer"))
}

fn get_usize_or(
    obj: &Map<String, Value>,
    node: &str,
    field: &str,
    default: usize,
) -> Result<usize> {
    match obj.get(field) {
        None => Ok(default),
        Some(_) => get_usize(obj, node, field),
    }
}

fn decode_array(v: &Value, node: &str, field: &str) -> Result<Vec<f64>> {
    match v {
        Value::Array(items) => items
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| perr(node, field, "array holds a non-number"))
            })
            .collect(),
        Value::Object(m) => {
            let s = m
                .get("b64")
                .and_then(Value::as_str)
                .ok_or_else(|| perr(node, field, "expected {\"b64\": string}"))?;
            let bytes = STANDARD
                .decode(s)
                .map_err(|e| perr(node, field, format!("bad base64: {e}")))?;
            if bytes.len() % 8 != 0 {
                return Err(perr(
                    node,
                    field,
                    "base64 payload is not a whole number of f64s",
                ));
            }
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        }
        _ => Err(perr(node, field, "expected an array or {\"b64\": ...}")),
    }
}

fn param(params: &Map<String, Value>, node: &str, field: &str) -> Result<Vec<f64>> {
    let v = params
        .get(field)
        .ok_or_else(|| perr(node, &format!("params.{field}"), "missing"))?;
    decode_array(v, node, &format!("params.{field}"))
}

fn parse_node(v: &Value, position: usize) -> Result<NodeSpec> {
    let fallback = format!("#{position}");
    let obj = v
        .as_object()
        .ok_or_else(|| perr(&fallback, "node", "expected an object"))?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| perr(&fallback, "id", "expected a string"))?
        .to_string();
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| perr(&id, "kind", "expected a string"))?;
    let empty = Map::new();
    let attrs = match obj.get("attrs") {
        None | Some(Value::Null) => &empty,
        Some(Value::Object(m)) => m,
        Some(_) => return Err(perr(&id, "attrs", "expected an object")),
    };
    let inputs = match obj.get("inputs") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|x| {
                x.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| perr(&id, "inputs", "expected node id strings"))
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(perr(&id, "inputs", "expected an array")),
    };
    let params = match obj.get("params") {
        None | Some(Value::Null) => None,
        Some(Value::Object(m)) => Some(m),
        Some(_) => return Err(perr(&id, "params", "expected an object")),
    };
    let op = match kind {
        "conv" => {
            let k = attrs.get("k").and_then(Value::as_u64).map(|v| v as usize);
            let kh = match k {
                Some(k) => get_usize_or(attrs, &id, "kh", k)?,
                None => get_usize(attrs, &id, "kh")?,
            };
            let kw = match k {
                Some(k) => get_usize_or(attrs, &id, "kw", k)?,
                None => get_usize(attrs, &id, "kw")?,
            };
            let bias = match attrs.get("bias") {
                None => params.map(|p| p.contains_key("bias")).unwrap_or(false),
                Some(b) => b
                    .as_bool()
                    .ok_or_else(|| perr(&id, "attrs.bias", "expected a bool"))?,
            };
            Op::Conv(ConvAttrs {
                in_ch: get_usize(attrs, &id, "in_ch")?,
                out_ch: get_usize(attrs, &id, "out_ch")?,
                kh,
                kw,
                stride: get_usize_or(attrs, &id, "stride", 1)?,
                pad: get_usize_or(attrs, &id, "pad", 0)?,
                bias,
            })
        }
        "batchnorm" => {
            let eps = match attrs.get("eps") {
                None => crate::runtime::BN_EPS,
                Some(e) => e
                    .as_f64()
                    .ok_or_else(|| perr(&id, "attrs.eps", "expected a number"))?,
            };
            let channels = match attrs.get("channels") {
                Some(_) => get_usize(attrs, &id, "channels")?,
                None => params
                    .and_then(|p| p.get("gamma"))
                    .map(|g| decode_array(g, &id, "params.gamma").map(|v| v.len()))
                    .transpose()?
                    .ok_or_else(|| perr(&id, "attrs.channels", "missing"))?,
            };
            Op::BatchNorm { channels, eps }
        }
        "silu" => Op::Silu,
        "relu" => Op::Relu,
        "maxpool2" => {
            let d = PoolAttrs::default();
            Op::MaxPool(PoolAttrs {
                kernel: get_usize_or(attrs, &id, "kernel", d.kernel)?,
                stride: get_usize_or(attrs, &id, "stride", d.stride)?,
                pad: get_usize_or(attrs, &id, "pad", d.pad)?,
            })
        }
        "upsample_nearest2" => Op::UpsampleNearest2,
        "concat" => Op::Concat,
        "add" => Op::Add,
        "detect_head" => Op::DetectHead {
            classes: get_usize(attrs, &id, "classes")?,
            boxes_per_cell: get_usize_or(attrs, &id, "boxes_per_cell", 1)?,
        },
        other => return Err(perr(&id, "kind", format!("unknown node kind `{other}`"))),
    };
    let params = match (&op, params) {
        (Op::Conv(a), Some(p)) => Some(LayerTensors::Conv(ConvParams {
            weight: param(p, &id, "weight")?,
            bias: if a.bias {
                Some(param(p, &id, "bias")?)
            } else {
                None
            },
        })),
        (Op::BatchNorm { .. }, Some(p)) => Some(LayerTensors::BatchNorm(BnParams {
            gamma: param(p, &id, "gamma")?,
            beta: param(p, &id, "beta")?,
            running_mean: param(p, &id, "running_mean")?,
            running_var: param(p, &id, "running_var")?,
        })),
        (Op::Conv(_) | Op::BatchNorm { .. }, None) => {
            return Err(perr(&id, "params", "required for this kind"))
        }
        (_, Some(_)) => return Err(perr(&id, "params", "not allowed for this kind")),
        (_, None) => None,
    };
    Ok(NodeSpec {
        id,
        op,
        inputs,
        params,
    })
}

pub fn from_json_str(text: &str) -> Result<GraphModel> {
    let doc: Value = serde_json::from_str(text)?;
    from_value(&doc)
}

pub fn from_value(doc: &Value) -> Result<GraphModel> {
    let top = doc
        .as_object()
        .ok_or_else(|| perr("<graph>", "<root>", "expected an object"))?;
    match top.get("format").and_then(Value::as_str) {
        Some(GRAPH_FORMAT) => {}
        Some(other) => {
            return Err(perr(
                "<graph>",
                "format",
                format!("unsupported format `{other}`"),
            ))
        }
        None => {
            return Err(perr(
                "<graph>",
                "format",
                format!("missing; expected `{GRAPH_FORMAT}`"),
            ))
        }
    }
    let name = top
        .get("name")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let shape = top
        .get("input_shape")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 3)
        .ok_or_else(|| perr("<graph>", "input_shape", "expected [c, h, w]"))?;
    let mut input_shape = [0usize; 3];
    for (dst, v) in input_shape.iter_mut().zip(shape) {
        *dst = v
            .as_u64()
            .filter(|x| *x > 0)
            .ok_or_else(|| perr("<graph>", "input_shape", "expected positive integers"))?
            as usize;
    }
    let strings = |field: &str| -> Result<Vec<String>> {
        match top.get(field) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|x| {
                    x.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| perr("<graph>", field, "expected strings"))
                })
                .collect(),
            Some(_) => Err(perr("<graph>", field, "expected an array")),
        }
    };
    let classes = strings("classes")?;
    let outputs = strings("outputs")?;
    let nodes = top
        .get("nodes")
        .and_then(Value::as_array)
        .ok_or_else(|| perr("<graph>", "nodes", "expected an array"))?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_node(v, i))
        .collect::<Result<Vec<_>>>()?;
    let model = GraphModel {
        name,
        input_shape,
        classes,
        nodes,
        outputs,
    };
    model.validate()?;
    Ok(model)
}
