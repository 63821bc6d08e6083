use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Int8,
    Int32,
    Fp32,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::Int8 => 1,
            DType::Int32 | DType::Fp32 => 4,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, DType::Fp32)
    }

    /// Representable range for integer types.
    pub fn int_range(self) -> (i64, i64) {
        match self {
            DType::Int8 => (-128, 127),
            DType::Int32 => (i32::MIN as i64, i32::MAX as i64),
            DType::Fp32 => (i64::MIN, i64::MAX),
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::Int8 => "int8",
            DType::Int32 => "int32",
            DType::Fp32 => "fp32",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Input,
    Output,
    Param,
    Intermediate,
}

/// Affine quantization: `real = scale * (q - zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Self {
        Self { scale, zero_point }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub id: String,
    pub dtype: DType,
    /// Empty until shape inference has run for intermediates and outputs.
    pub shape: Vec<usize>,
    pub kind: TensorKind,
    pub quant: Option<QuantParams>,
}

impl TensorSpec {
    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_size(&self) -> usize {
        self.elements() * self.dtype.width()
    }

    pub fn has_shape(&self) -> bool {
        !self.shape.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Dense,
    Conv2d,
    Add,
    Relu,
    Maxpool2d,
    Avgpool2d,
    Reshape,
    Softmax,
    Quantize,
    Dequantize,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::Dense,
        OpKind::Conv2d,
        OpKind::Add,
        OpKind::Relu,
        OpKind::Maxpool2d,
        OpKind::Avgpool2d,
        OpKind::Reshape,
        OpKind::Softmax,
        OpKind::Quantize,
        OpKind::Dequantize,
    ];

    /// `(inputs, outputs)` arity.
    pub fn arity(self) -> (usize, usize) {
        match self {
            OpKind::Dense | OpKind::Conv2d | OpKind::Add => (2, 1),
            _ => (1, 1),
        }
    }

    /// Tag used when composing fused kernel names.
    pub fn tag(self) -> &'static str {
        match self {
            OpKind::Dense => "nn_dense",
            OpKind::Conv2d => "nn_conv2d",
            OpKind::Add => "add",
            OpKind::Relu => "nn_relu",
            OpKind::Maxpool2d => "nn_max_pool2d",
            OpKind::Avgpool2d => "nn_avg_pool2d",
            OpKind::Reshape => "reshape",
            OpKind::Softmax => "nn_softmax",
            OpKind::Quantize => "qnn_quantize",
            OpKind::Dequantize => "qnn_dequantize",
        }
    }

    pub fn is_mac(self) -> bool {
        matches!(self, OpKind::Dense | OpKind::Conv2d)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Dense => "dense",
            OpKind::Conv2d => "conv2d",
            OpKind::Add => "add",
            OpKind::Relu => "relu",
            OpKind::Maxpool2d => "maxpool2d",
            OpKind::Avgpool2d => "avgpool2d",
            OpKind::Reshape => "reshape",
            OpKind::Softmax => "softmax",
            OpKind::Quantize => "quantize",
            OpKind::Dequantize => "dequantize",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kind-specific node attributes. Unused fields stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
}

impl Attrs {
    pub fn window(kernel: [usize; 2], stride: [usize; 2]) -> Self {
        Attrs { kernel: Some(kernel), stride: Some(stride), ..Default::default() }
    }

    pub fn reshape(shape: Vec<usize>) -> Self {
        Attrs { shape: Some(shape), ..Default::default() }
    }

    pub fn stride_or_default(&self) -> [usize; 2] {
        self.stride.unwrap_or([1, 1])
    }

    pub fn padding_or_default(&self) -> [usize; 2] {
        self.padding.unwrap_or([0, 0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNode {
    pub id: String,
    pub kind: OpKind,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub attrs: Attrs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlob {
    /// Tensor id of the parameter.
    pub tensor: String,
    /// Stable annotation name (`p0`, `p1`, ...).
    pub name: String,
    pub data: Vec<u8>,
}

/// A validated model graph. Construct with [`ModelGraph::new`] or
/// [`super::load_model`].
#[derive(Debug, Clone)]
pub struct ModelGraph {
    name: String,
    tensors: Vec<TensorSpec>,
    nodes: Vec<OperatorNode>,
    params: Vec<ParamBlob>,
    tensor_index: HashMap<String, usize>,
    param_index: HashMap<String, usize>,
}

impl PartialEq for ModelGraph {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.tensors == other.tensors
            && self.nodes == other.nodes
            && self.params == other.params
    }
}

impl ModelGraph {
    /// Builds and validates a graph. `param_data` maps param tensor ids to
    /// their raw little-endian bytes; names `p0..pn` are assigned here.
    pub fn new(
        name: impl Into<String>,
        tensors: Vec<TensorSpec>,
        nodes: Vec<OperatorNode>,
        param_data: Vec<(String, Vec<u8>)>,
    ) -> Result<Self, ModelError> {
        let mut tensor_index = HashMap::with_capacity(tensors.len());
        for (i, t) in tensors.iter().enumerate() {
            if tensor_index.insert(t.id.clone(), i).is_some() {
                return Err(ModelError::validation(format!("tensor {}", t.id), "duplicate tensor id"));
            }
        }

        let names = assign_param_names(&tensors, &nodes, &tensor_index);
        let mut blobs: HashMap<String, Vec<u8>> = HashMap::new();
        for (id, data) in param_data {
            if blobs.insert(id.clone(), data).is_some() {
                return Err(ModelError::validation(format!("param {id}"), "duplicate parameter blob"));
            }
        }
        let mut params = Vec::with_capacity(names.len());
        for (tensor, name) in names {
            let data = blobs
                .remove(&tensor)
                .ok_or_else(|| ModelError::validation(format!("tensor {tensor}"), "param tensor has no data blob"))?;
            params.push(ParamBlob { tensor, name, data });
        }
        if let Some(extra) = blobs.keys().min() {
            return Err(ModelError::validation(
                format!("param {extra}"),
                "data blob does not belong to a param tensor",
            ));
        }
        let param_index = params.iter().enumerate().map(|(i, p)| (p.tensor.clone(), i)).collect();

        let graph = ModelGraph { name: name.into(), tensors, nodes, params, tensor_index, param_index };
        super::validate::validate(&graph)?;
        Ok(graph)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn nodes(&self) -> &[OperatorNode] {
        &self.nodes
    }

    pub fn params(&self) -> &[ParamBlob] {
        &self.params
    }

    pub fn tensor(&self, id: &str) -> Option<&TensorSpec> {
        self.tensor_index.get(id).map(|&i| &self.tensors[i])
    }

    pub fn tensor_position(&self, id: &str) -> Option<usize> {
        self.tensor_index.get(id).copied()
    }

    pub fn param(&self, tensor_id: &str) -> Option<&ParamBlob> {
        self.param_index.get(tensor_id).map(|&i| &self.params[i])
    }

    pub fn param_position(&self, tensor_id: &str) -> Option<usize> {
        self.param_index.get(tensor_id).copied()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &TensorSpec> {
        self.tensors.iter().filter(|t| t.kind == TensorKind::Input)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &TensorSpec> {
        self.tensors.iter().filter(|t| t.kind == TensorKind::Output)
    }

    /// Node indices that read tensor `id`.
    pub fn consumers(&self, id: &str) -> Vec<usize> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.inputs.iter().any(|i| i == id)).map(|(i, _)| i).collect()
    }

    /// Index of the node producing tensor `id`.
    pub fn producer(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.outputs.iter().any(|o| o == id))
    }

    pub(crate) fn with_shapes(&self, shapes: Vec<Vec<usize>>) -> Result<Self, ModelError> {
        let mut tensors = self.tensors.clone();
        for (t, s) in tensors.iter_mut().zip(shapes) {
            t.shape = s;
        }
        let graph = ModelGraph { tensors, ..self.clone() };
        super::validate::validate(&graph)?;
        Ok(graph)
    }

    pub fn is_shape_complete(&self) -> bool {
        self.tensors.iter().all(TensorSpec::has_shape)
    }
}

/// Names param tensors `p0..pn` in the order nodes first consume them; any
/// param never consumed follows in tensor-table order.
fn assign_param_names(
    tensors: &[TensorSpec],
    nodes: &[OperatorNode],
    index: &HashMap<String, usize>,
) -> Vec<(String, String)> {
    let mut order: Vec<usize> = Vec::new();
    for node in nodes {
        for input in &node.inputs {
            if let Some(&i) = index.get(input) {
                if tensors[i].kind == TensorKind::Param && !order.contains(&i) {
                    order.push(i);
                }
            }
        }
    }
    for (i, t) in tensors.iter().enumerate() {
        if t.kind == TensorKind::Param && !order.contains(&i) {
            order.push(i);
        }
    }
    order.into_iter().enumerate().map(|(k, i)| (tensors[i].id.clone(), format!("p{k}"))).collect()
}
