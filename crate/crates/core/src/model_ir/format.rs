//! JSON model document: `name`, `tensors`, `nodes`, `params`
//! (tensor id -> base64 little-endian blob).

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Attrs, DType, ModelError, ModelGraph, OpKind, OperatorNode, QuantParams, TensorKind, TensorSpec};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    name: String,
    tensors: Vec<DocTensor>,
    nodes: Vec<DocNode>,
    #[serde(default)]
    params: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocTensor {
    id: String,
    dtype: DType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    shape: Vec<usize>,
    kind: TensorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zero_point: Option<i32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocNode {
    id: String,
    kind: OpKind,
    inputs: Vec<String>,
    outputs: Vec<String>,
    #[serde(default)]
    attrs: Attrs,
}

/// Parses and validates a model document.
pub fn load_model(document: &[u8]) -> Result<ModelGraph, ModelError> {
    let doc: Document = serde_json::from_slice(document).map_err(|e| ModelError::Parse(e.to_string()))?;
    let mut params = Vec::with_capacity(doc.params.len());
    for (id, encoded) in &doc.params {
        let data = B64
            .decode(encoded.as_bytes())
            .map_err(|e| ModelError::Parse(format!("params.{id}: invalid base64: {e}")))?;
        params.push((id.clone(), data));
    }
    from_document(doc, params)
}

/// Rebuilds a graph from a document whose `params` map is ignored, taking
/// raw blobs (tensor id, bytes) instead.
pub(crate) fn load_structure(structure: &[u8], params: Vec<(String, Vec<u8>)>) -> Result<ModelGraph, ModelError> {
    let doc: Document = serde_json::from_slice(structure).map_err(|e| ModelError::Parse(e.to_string()))?;
    from_document(doc, params)
}

/// Document of `graph` with an empty `params` map.
pub(crate) fn save_structure(graph: &ModelGraph) -> Vec<u8> {
    let mut doc = to_document(graph);
    doc.params.clear();
    serde_json::to_vec(&doc).expect("model document serialization is infallible")
}

fn from_document(doc: Document, params: Vec<(String, Vec<u8>)>) -> Result<ModelGraph, ModelError> {
    let mut tensors = Vec::with_capacity(doc.tensors.len());
    for t in doc.tensors {
        let quant = match (t.scale, t.zero_point) {
            (None, None) => None,
            (Some(scale), Some(zero_point)) => Some(QuantParams { scale, zero_point }),
            _ => {
                return Err(ModelError::validation(
                    format!("tensor {}", t.id),
                    "scale and zero_point must be given together",
                ))
            }
        };
        tensors.push(TensorSpec { id: t.id, dtype: t.dtype, shape: t.shape, kind: t.kind, quant });
    }
    let nodes = doc
        .nodes
        .into_iter()
        .map(|n| OperatorNode { id: n.id, kind: n.kind, inputs: n.inputs, outputs: n.outputs, attrs: n.attrs })
        .collect();
    ModelGraph::new(doc.name, tensors, nodes, params)
}

/// Serializes a graph back into the model document format.
pub fn save_model(graph: &ModelGraph) -> Vec<u8> {
    serde_json::to_vec_pretty(&to_document(graph)).expect("model document serialization is infallible")
}

fn to_document(graph: &ModelGraph) -> Document {
    Document {
        name: graph.name().to_string(),
        tensors: graph
            .tensors()
            .iter()
            .map(|t| DocTensor {
                id: t.id.clone(),
                dtype: t.dtype,
                shape: t.shape.clone(),
                kind: t.kind,
                scale: t.quant.map(|q| q.scale),
                zero_point: t.quant.map(|q| q.zero_point),
            })
            .collect(),
        nodes: graph
            .nodes()
            .iter()
            .map(|n| DocNode {
                id: n.id.clone(),
                kind: n.kind,
                inputs: n.inputs.clone(),
                outputs: n.outputs.clone(),
                attrs: n.attrs.clone(),
            })
            .collect(),
        params: graph.params().iter().map(|p| (p.tensor.clone(), B64.encode(&p.data))).collect(),
    }
}
