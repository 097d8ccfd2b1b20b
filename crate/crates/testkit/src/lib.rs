//! Test support shared by the modtrans crates.
//!
//! [`proto`] holds ONNX message definitions encoded by `prost`, which serves
//! as the reference encoder the decoder is checked against. [`OracleModel`]
//! describes a model independently of the decoder's own types, and
//! [`http::FixtureServer`] serves fixed bytes over loopback HTTP.

pub mod http;
pub mod proto;

use prost::encoding::{self, WireType};
use prost::Message;
use rand::seq::SliceRandom;
use rand::Rng;

/// Reference description of one initializer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleTensor {
    pub name: String,
    pub dims: Vec<i64>,
    pub data_type: i32,
    /// Length of the zero-filled `raw_data` payload to attach.
    pub payload_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleNode {
    pub name: String,
    pub op_type: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleModel {
    pub ir_version: i64,
    pub graph_name: String,
    pub initializers: Vec<OracleTensor>,
    pub nodes: Vec<OracleNode>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

/// Codes drawn by [`random_model`]: every ONNX type with a whole-byte width
/// plus STRING and an out-of-range code.
pub const RANDOM_DTYPES: &[i32] = &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 16, 99];

const OPS: &[&str] = &[
    "Conv",
    "Gemm",
    "Relu",
    "MatMul",
    "Add",
    "BatchNormalization",
];

fn ident(rng: &mut impl Rng, prefix: &str) -> String {
    let len = rng.gen_range(1..=8);
    let body: String = (0..len)
        .map(|_| {
            *b"abcdefghijklmnopqrstuvwxyz0123456789_."
                .choose(rng)
                .unwrap() as char
        })
        .collect();
    format!("{prefix}{body}")
}

/// A small random model: at most 8 initializers with unique names, at most 5
/// dims per tensor, every dim at most 16.
pub fn random_model(rng: &mut impl Rng) -> OracleModel {
    let n_init = rng.gen_range(0..=8);
    let initializers = (0..n_init)
        .map(|i| OracleTensor {
            // The index suffix keeps names unique.
            name: format!("{}_{i}", ident(rng, "t")),
            dims: (0..rng.gen_range(0..=5))
                .map(|_| rng.gen_range(0..=16))
                .collect(),
            data_type: *RANDOM_DTYPES.choose(rng).unwrap(),
            payload_len: if rng.gen_bool(0.3) {
                rng.gen_range(0..64)
            } else {
                0
            },
        })
        .collect();
    let nodes = (0..rng.gen_range(0..=4))
        .map(|_| OracleNode {
            name: ident(rng, "n"),
            op_type: OPS.choose(rng).unwrap().to_string(),
            inputs: vec![ident(rng, "x")],
            outputs: vec![ident(rng, "y")],
        })
        .collect();
    OracleModel {
        ir_version: rng.gen_range(1..=10),
        graph_name: if rng.gen_bool(0.8) {
            ident(rng, "g")
        } else {
            String::new()
        },
        initializers,
        nodes,
        inputs: (0..rng.gen_range(0..=2))
            .map(|_| ident(rng, "in"))
            .collect(),
        outputs: (0..rng.gen_range(0..=2))
            .map(|_| ident(rng, "out"))
            .collect(),
    }
}

impl OracleModel {
    pub fn to_proto(&self) -> proto::ModelProto {
        proto::ModelProto {
            ir_version: self.ir_version,
            producer_name: "modtrans-testkit".into(),
            graph: Some(proto::GraphProto {
                node: self
                    .nodes
                    .iter()
                    .map(|n| proto::NodeProto {
                        input: n.inputs.clone(),
                        output: n.outputs.clone(),
                        name: n.name.clone(),
                        op_type: n.op_type.clone(),
                    })
                    .collect(),
                name: self.graph_name.clone(),
                initializer: self
                    .initializers
                    .iter()
                    .map(|t| proto::TensorProto {
                        dims: t.dims.clone(),
                        data_type: t.data_type,
                        name: t.name.clone(),
                        raw_data: vec![0; t.payload_len],
                    })
                    .collect(),
                input: self
                    .inputs
                    .iter()
                    .map(String::as_str)
                    .map(value_info)
                    .collect(),
                output: self
                    .outputs
                    .iter()
                    .map(String::as_str)
                    .map(value_info)
                    .collect(),
            }),
        }
    }

    /// Canonical `prost` encoding.
    pub fn encode(&self) -> Vec<u8> {
        self.to_proto().encode_to_vec()
    }

    /// Field-by-field encoding that injects unknown fields (numbers 100 and
    /// up, every non-group wire type) at random positions of every message,
    /// and randomly packs `dims`. Decoding must give the same result as
    /// [`OracleModel::encode`].
    pub fn encode_noisy(&self, rng: &mut impl Rng) -> Vec<u8> {
        let graph = self.to_proto().graph.unwrap();

        let mut graph_fields = Vec::new();
        for n in &graph.node {
            let mut f = Vec::new();
            for s in &n.input {
                f.push(string_field(1, s));
            }
            for s in &n.output {
                f.push(string_field(2, s));
            }
            f.push(string_field(3, &n.name));
            f.push(string_field(4, &n.op_type));
            graph_fields.push(message_field(1, &noisy(f, rng)));
        }
        graph_fields.push(string_field(2, &graph.name));
        for t in &graph.initializer {
            let mut f = Vec::new();
            if rng.gen_bool(0.5) {
                let mut buf = Vec::new();
                encoding::int64::encode_packed(1, &t.dims, &mut buf);
                f.push(buf);
            } else {
                for d in &t.dims {
                    let mut buf = Vec::new();
                    encoding::int64::encode(1, d, &mut buf);
                    f.push(buf);
                }
            }
            let mut buf = Vec::new();
            encoding::int32::encode(2, &t.data_type, &mut buf);
            f.push(buf);
            f.push(string_field(8, &t.name));
            if !t.raw_data.is_empty() {
                let mut buf = Vec::new();
                encoding::bytes::encode(9, &t.raw_data, &mut buf);
                f.push(buf);
            }
            graph_fields.push(message_field(5, &noisy(f, rng)));
        }
        for (tag, infos) in [(11, &graph.input), (12, &graph.output)] {
            for vi in infos {
                let inner = noisy(vec![string_field(1, &vi.name)], rng);
                graph_fields.push(message_field(tag, &inner));
            }
        }

        let mut model_fields = Vec::new();
        let mut buf = Vec::new();
        encoding::int64::encode(1, &self.ir_version, &mut buf);
        model_fields.push(buf);
        model_fields.push(string_field(2, "modtrans-testkit"));
        model_fields.push(message_field(7, &noisy(graph_fields, rng)));
        noisy(model_fields, rng)
    }
}

fn value_info(name: &str) -> proto::ValueInfoProto {
    proto::ValueInfoProto { name: name.into() }
}

fn string_field(tag: u32, value: &str) -> Vec<u8> {
    let mut buf = Vec::new();
    encoding::string::encode(tag, &value.to_string(), &mut buf);
    buf
}

fn message_field(tag: u32, body: &[u8]) -> Vec<u8> {
    let mut buf = Vec::new();
    encoding::bytes::encode(tag, &body.to_vec(), &mut buf);
    buf
}

/// One unknown field with a random number >= 100 and a random wire type.
pub fn unknown_field(rng: &mut impl Rng) -> Vec<u8> {
    let tag = rng.gen_range(100..=50_000);
    let mut buf = Vec::new();
    match rng.gen_range(0..4) {
        0 => {
            encoding::encode_key(tag, WireType::Varint, &mut buf);
            encoding::encode_varint(rng.gen(), &mut buf);
        }
        1 => {
            encoding::encode_key(tag, WireType::SixtyFourBit, &mut buf);
            buf.extend_from_slice(&rng.gen::<u64>().to_le_bytes());
        }
        2 => {
            encoding::encode_key(tag, WireType::ThirtyTwoBit, &mut buf);
            buf.extend_from_slice(&rng.gen::<u32>().to_le_bytes());
        }
        _ => {
            let len = rng.gen_range(0..24);
            let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            encoding::bytes::encode(tag, &payload, &mut buf);
        }
    }
    buf
}

/// Concatenates `fields` after splicing 0..=3 unknown fields in at random
/// positions.
fn noisy(mut fields: Vec<Vec<u8>>, rng: &mut impl Rng) -> Vec<u8> {
    for _ in 0..rng.gen_range(0..=3) {
        let at = rng.gen_range(0..=fields.len());
        fields.insert(at, unknown_field(rng));
    }
    fields.concat()
}

/// Builds a model whose initializers have the given `(name, dims)` shapes,
/// FLOAT typed, each carrying a full-size zeroed `raw_data` payload.
pub fn full_payload_model(graph_name: &str, shapes: &[(String, Vec<i64>)]) -> Vec<u8> {
    let model = proto::ModelProto {
        ir_version: 3,
        producer_name: "modtrans-testkit".into(),
        graph: Some(proto::GraphProto {
            name: graph_name.into(),
            initializer: shapes
                .iter()
                .map(|(name, dims)| {
                    let elems: i64 = dims.iter().product();
                    proto::TensorProto {
                        dims: dims.clone(),
                        data_type: 1,
                        name: name.clone(),
                        raw_data: vec![0; elems as usize * 4],
                    }
                })
                .collect(),
            ..Default::default()
        }),
    };
    model.encode_to_vec()
}
