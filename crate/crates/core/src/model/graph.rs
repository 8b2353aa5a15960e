use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{conv_output_hw, KERNEL_SIZES};
use crate::tensor::Shape;

pub type NodeId = usize;

/// What a graph node computes. Encode/decode are the pointwise channel
/// maps inserted around a chip crossing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerKind {
    Input {
        c: usize,
    },
    Conv2d {
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        c: usize,
    },
    Relu,
    ResidualAdd,
    GlobalAvgPool,
    LinearHead {
        features: usize,
        classes: usize,
    },
    BottleneckEncode {
        c_in: usize,
        c_mid: usize,
    },
    BottleneckDecode {
        c_mid: usize,
        c_out: usize,
    },
}

impl LayerKind {
    pub fn arity(&self) -> usize {
        match self {
            LayerKind::Input { .. } => 0,
            LayerKind::ResidualAdd => 2,
            _ => 1,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::BatchNorm { .. } => "batch_norm",
            LayerKind::Relu => "relu",
            LayerKind::ResidualAdd => "residual_add",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::LinearHead { .. } => "linear_head",
            LayerKind::BottleneckEncode { .. } => "bottleneck_encode",
            LayerKind::BottleneckDecode { .. } => "bottleneck_decode",
        }
    }

    /// Convolution geometry `(c_in, c_out, k, stride, pad)` for every conv-like kind.
    pub fn conv_geometry(&self) -> Option<(usize, usize, usize, usize, usize)> {
        match *self {
            LayerKind::Conv2d {
                c_in,
                c_out,
                k,
                stride,
                pad,
            } => Some((c_in, c_out, k, stride, pad)),
            LayerKind::BottleneckEncode { c_in, c_mid } => Some((c_in, c_mid, 1, 1, 0)),
            LayerKind::BottleneckDecode { c_mid, c_out } => Some((c_mid, c_out, 1, 1, 0)),
            _ => None,
        }
    }

    /// Named parameter shapes owned by a node of this kind.
    pub fn param_shapes(&self) -> Vec<(&'static str, Shape)> {
        if let Some((c_in, c_out, k, _, _)) = self.conv_geometry() {
            return vec![
                ("weight", Shape::new(c_out, c_in, k, k)),
                ("bias", Shape::vector(c_out)),
            ];
        }
        match *self {
            LayerKind::BatchNorm { c } => {
                vec![("gamma", Shape::vector(c)), ("beta", Shape::vector(c))]
            }
            LayerKind::LinearHead { features, classes } => vec![
                ("weight", Shape::new(classes, features, 1, 1)),
                ("bias", Shape::vector(classes)),
            ],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.numel()).sum()
    }

    /// Whether this node starts its own row in a traffic report. BatchNorm and
    /// ReLU fold into the row of the layer that feeds them; the input node
    /// has no row.
    pub fn is_report_row(&self) -> bool {
        !matches!(
            self,
            LayerKind::Input { .. } | LayerKind::BatchNorm { .. } | LayerKind::Relu
        )
    }

    /// Shape inference for one node.
    pub fn output_shape(&self, inputs: &[Shape]) -> std::result::Result<Shape, String> {
        if inputs.len() != self.arity() {
            return Err(format!(
                "expects {} inputs, has {}",
                self.arity(),
                inputs.len()
            ));
        }
        let need_c = |c: usize| {
            if inputs[0].c == c {
                Ok(())
            } else {
                Err(format!(
                    "expects {c} input channels, got shape {}",
                    inputs[0]
                ))
            }
        };
        match *self {
            LayerKind::Input { .. } => Err("input shape comes from the graph".into()),
            LayerKind::Relu => Ok(inputs[0]),
            LayerKind::BatchNorm { c } => need_c(c).map(|_| inputs[0]),
            LayerKind::ResidualAdd => {
                if inputs[0] == inputs[1] {
                    Ok(inputs[0])
                } else {
                    Err(format!(
                        "operand shapes differ: {} vs {}",
                        inputs[0], inputs[1]
                    ))
                }
            }
            LayerKind::GlobalAvgPool => Ok(Shape::new(inputs[0].n, inputs[0].c, 1, 1)),
            LayerKind::LinearHead { features, classes } => {
                need_c(features)?;
                if inputs[0].h != 1 || inputs[0].w != 1 {
                    return Err(format!(
                        "expects pooled (n, c, 1, 1) input, got {}",
                        inputs[0]
                    ));
                }
                Ok(Shape::new(inputs[0].n, classes, 1, 1))
            }
            _ => {
                let (c_in, c_out, k, stride, pad) = self.conv_geometry().expect("conv-like kind");
                need_c(c_in)?;
                if !KERNEL_SIZES.contains(&k) {
                    return Err(format!("unsupported kernel size {k}"));
                }
                let (oh, ow) = conv_output_hw(inputs[0].h, inputs[0].w, k, stride, pad)
                    .ok_or_else(|| {
                        format!("k={k} stride={stride} pad={pad} does not fit {}", inputs[0])
                    })?;
                Ok(Shape::new(inputs[0].n, c_out, oh, ow))
            }
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerKind::Input { c } => write!(f, "Input({c})"),
            LayerKind::Conv2d {
                c_in,
                c_out,
                k,
                stride,
                pad,
            } => {
                write!(f, "Conv2d({c_in}->{c_out}, k={k}, s={stride}, p={pad})")
            }
            LayerKind::BatchNorm { c } => write!(f, "BatchNorm({c})"),
            LayerKind::Relu => f.write_str("ReLU"),
            LayerKind::ResidualAdd => f.write_str("ResidualAdd"),
            LayerKind::GlobalAvgPool => f.write_str("GlobalAvgPool"),
            LayerKind::LinearHead { features, classes } => {
                write!(f, "LinearHead({features}->{classes})")
            }
            LayerKind::BottleneckEncode { c_in, c_mid } => {
                write!(f, "BottleneckEncode({c_in}->{c_mid})")
            }
            LayerKind::BottleneckDecode { c_mid, c_out } => {
                write!(f, "BottleneckDecode({c_mid}->{c_out})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: NodeId,
    pub name: String,
    pub kind: LayerKind,
    /// Producers, in operand order.
    pub inputs: Vec<NodeId>,
}

/// A producer-to-consumer edge annotated with the tensor shape it carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub shape: Shape,
}

/// Appends nodes in topological order.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<LayerNode>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, kind: LayerKind, inputs: &[NodeId]) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(LayerNode {
            id,
            name: name.into(),
            kind,
            inputs: inputs.to_vec(),
        });
        id
    }

    pub fn input(&mut self, c: usize) -> NodeId {
        self.push("input", LayerKind::Input { c }, &[])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn finish(self, input_shape: Shape) -> Result<NetworkGraph> {
        NetworkGraph::new(self.nodes, input_shape)
    }
}

/// Immutable, shape-checked layer DAG.
///
/// Nodes are stored in topological order (`inputs` always reference earlier
/// ids). Shapes are annotated for the batch size of `input_shape`; execution
/// accepts any batch size as long as `c, h, w` agree.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    nodes: Vec<LayerNode>,
    shapes: Vec<Shape>,
    edges: Vec<Edge>,
    consumers: Vec<Vec<NodeId>>,
    input: NodeId,
    output: NodeId,
}

impl NetworkGraph {
    pub fn new(nodes: Vec<LayerNode>, input_shape: Shape) -> Result<Self> {
        if !input_shape.is_valid() {
            return Err(Error::Shape(format!(
                "invalid graph input shape {input_shape}"
            )));
        }
        let mut input = None;
        let mut consumers = vec![Vec::new(); nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Config(format!(
                    "node {:?} has id {} at position {i}",
                    node.name, node.id
                )));
            }
            if node.inputs.len() != node.kind.arity() {
                return Err(Error::Shape(format!(
                    "node {i} ({}) {} expects {} inputs, has {}",
                    node.name,
                    node.kind,
                    node.kind.arity(),
                    node.inputs.len()
                )));
            }
            for &src in &node.inputs {
                if src >= i {
                    return Err(Error::Config(format!(
                        "node {i} ({}) reads node {src}, which does not precede it",
                        node.name
                    )));
                }
                consumers[src].push(i);
            }
            if let LayerKind::Input { c } = node.kind {
                if input.replace(i).is_some() {
                    return Err(Error::Config("graph has more than one input node".into()));
                }
                if c != input_shape.c {
                    return Err(Error::Shape(format!(
                        "input node declares {c} channels, input shape is {input_shape}"
                    )));
                }
            }
        }
        let input = input.ok_or_else(|| Error::Config("graph has no input node".into()))?;
        let sinks: Vec<NodeId> = (0..nodes.len())
            .filter(|&i| consumers[i].is_empty())
            .collect();
        let output = match sinks.as_slice() {
            [only] => *only,
            _ => {
                return Err(Error::Config(format!(
                    "graph must have exactly one output node, found {}",
                    sinks.len()
                )))
            }
        };

        let shapes = infer_shapes(&nodes, input_shape)?;
        let edges = nodes
            .iter()
            .flat_map(|n| n.inputs.iter().map(move |&src| (src, n.id)))
            .map(|(src, dst)| Edge {
                src,
                dst,
                shape: shapes[src],
            })
            .collect();
        Ok(Self {
            nodes,
            shapes,
            edges,
            consumers,
            input,
            output,
        })
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &LayerNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn consumers(&self, id: NodeId) -> &[NodeId] {
        &self.consumers[id]
    }

    pub fn input(&self) -> NodeId {
        self.input
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[self.input]
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes[self.output]
    }

    /// Annotated output shape of `id`.
    pub fn shape(&self, id: NodeId) -> Shape {
        self.shapes[id]
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.kind.param_count()).sum()
    }

    /// Same topology re-annotated for a different input shape.
    pub fn with_input_shape(&self, input_shape: Shape) -> Result<Self> {
        Self::new(self.nodes.clone(), input_shape)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            input_shape: self.input_shape(),
            output_shape: self.output_shape(),
            param_count: self.param_count(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDocument {
                    node: n.clone(),
                    output_shape: self.shapes[n.id],
                    params: n
                        .kind
                        .param_shapes()
                        .into_iter()
                        .map(|(name, shape)| ParamDocument {
                            name: name.to_string(),
                            shape,
                        })
                        .collect(),
                })
                .collect(),
            edges: self.edges.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    /// Rebuilds and re-validates a graph from its serialized document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(text)?;
        let graph = Self::new(
            doc.nodes.into_iter().map(|n| n.node).collect(),
            doc.input_shape,
        )?;
        if graph.edges != doc.edges {
            return Err(Error::Format(
                "edge list disagrees with node inputs or shapes".into(),
            ));
        }
        Ok(graph)
    }
}

/// Output shape of every node for the given graph input.
pub fn infer_shapes(nodes: &[LayerNode], input_shape: Shape) -> Result<Vec<Shape>> {
    let mut shapes: Vec<Shape> = Vec::with_capacity(nodes.len());
    for node in nodes {
        let shape = if let LayerKind::Input { .. } = node.kind {
            input_shape
        } else {
            let ins: Vec<Shape> = node.inputs.iter().map(|&i| shapes[i]).collect();
            node.kind.output_shape(&ins).map_err(|reason| {
                Error::Shape(format!(
                    "node {} ({}) {}: {reason}",
                    node.id, node.name, node.kind
                ))
            })?
        };
        shapes.push(shape);
    }
    Ok(shapes)
}

/// Serialized form of a graph: node list, edge list and parameter shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub input_shape: Shape,
    pub output_shape: Shape,
    pub param_count: usize,
    pub nodes: Vec<NodeDocument>,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDocument {
    #[serde(flatten)]
    pub node: LayerNode,
    pub output_shape: Shape,
    pub params: Vec<ParamDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDocument {
    pub name: String,
    pub shape: Shape,
}
