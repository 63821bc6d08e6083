use super::{Attrs, DType, ModelError, ModelGraph, OpKind, OperatorNode, QuantParams, TensorKind, TensorSpec};

/// Incremental construction of a [`ModelGraph`]; validation happens in
/// [`GraphBuilder::build`].
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    name: String,
    tensors: Vec<TensorSpec>,
    nodes: Vec<OperatorNode>,
    params: Vec<(String, Vec<u8>)>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        GraphBuilder { name: name.into(), ..Default::default() }
    }

    fn tensor(
        &mut self,
        id: &str,
        dtype: DType,
        shape: &[usize],
        kind: TensorKind,
        quant: Option<QuantParams>,
    ) -> &mut Self {
        self.tensors.push(TensorSpec { id: id.to_string(), dtype, shape: shape.to_vec(), kind, quant });
        self
    }

    pub fn input(&mut self, id: &str, shape: &[usize]) -> &mut Self {
        self.tensor(id, DType::Fp32, shape, TensorKind::Input, None)
    }

    /// Graph output; shape left to inference.
    pub fn output(&mut self, id: &str) -> &mut Self {
        self.tensor(id, DType::Fp32, &[], TensorKind::Output, None)
    }

    pub fn fp32(&mut self, id: &str) -> &mut Self {
        self.tensor(id, DType::Fp32, &[], TensorKind::Intermediate, None)
    }

    pub fn int8(&mut self, id: &str, quant: QuantParams) -> &mut Self {
        self.tensor(id, DType::Int8, &[], TensorKind::Intermediate, Some(quant))
    }

    pub fn int32(&mut self, id: &str, quant: QuantParams) -> &mut Self {
        self.tensor(id, DType::Int32, &[], TensorKind::Intermediate, Some(quant))
    }

    pub fn param_i8(&mut self, id: &str, shape: &[usize], quant: QuantParams, data: &[i8]) -> &mut Self {
        self.params.push((id.to_string(), data.iter().map(|&v| v as u8).collect()));
        self.tensor(id, DType::Int8, shape, TensorKind::Param, Some(quant))
    }

    pub fn param_i32(&mut self, id: &str, shape: &[usize], quant: QuantParams, data: &[i32]) -> &mut Self {
        self.params.push((id.to_string(), data.iter().flat_map(|v| v.to_le_bytes()).collect()));
        self.tensor(id, DType::Int32, shape, TensorKind::Param, Some(quant))
    }

    pub fn param_f32(&mut self, id: &str, shape: &[usize], data: &[f32]) -> &mut Self {
        self.params.push((id.to_string(), data.iter().flat_map(|v| v.to_le_bytes()).collect()));
        self.tensor(id, DType::Fp32, shape, TensorKind::Param, None)
    }

    pub fn node(&mut self, id: &str, kind: OpKind, inputs: &[&str], outputs: &[&str]) -> &mut Self {
        self.node_with(id, kind, inputs, outputs, Attrs::default())
    }

    pub fn node_with(&mut self, id: &str, kind: OpKind, inputs: &[&str], outputs: &[&str], attrs: Attrs) -> &mut Self {
        self.nodes.push(OperatorNode {
            id: id.to_string(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            attrs,
        });
        self
    }

    /// Validates the graph and runs shape inference.
    pub fn build(&self) -> Result<ModelGraph, ModelError> {
        let g = ModelGraph::new(self.name.clone(), self.tensors.clone(), self.nodes.clone(), self.params.clone())?;
        super::infer_shapes(&g)
    }

    /// Validates without inferring shapes.
    pub fn build_raw(&self) -> Result<ModelGraph, ModelError> {
        ModelGraph::new(self.name.clone(), self.tensors.clone(), self.nodes.clone(), self.params.clone())
    }
}
