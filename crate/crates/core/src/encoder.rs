//! Type-specific projection followed by edge-type-aware multi-head attention.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{GraphContext, MessageGraph};
use crate::tensor::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub value: ParamId,
    pub query: ParamId,
    pub key: ParamId,
    pub edge_embedding: ParamId,
    pub edge_query: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderParameters {
    pub proj_w: Vec<ParamId>,
    pub proj_b: Vec<ParamId>,
    pub layers: Vec<AttentionLayer>,
    pub dim: usize,
    pub heads: usize,
}

impl EncoderParameters {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        feature_dims: &[usize],
        num_edge_types: usize,
        dim: usize,
        heads: usize,
        layers: usize,
    ) -> Result<Self> {
        if dim == 0 || heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "hidden dimension {dim} must be a positive multiple of the head count {heads}"
            )));
        }
        let head_dim = dim / heads;
        let mut proj_w = Vec::new();
        let mut proj_b = Vec::new();
        for (t, &f) in feature_dims.iter().enumerate() {
            proj_w.push(store.add(
                format!("enc.proj.{t}.w"),
                Tensor::xavier_uniform(f, dim, rng),
            ));
            proj_b.push(store.add(format!("enc.proj.{t}.b"), Tensor::zeros(1, dim)));
        }
        let layers = (0..layers)
            .map(|l| AttentionLayer {
                value: store.add(
                    format!("enc.{l}.value"),
                    Tensor::xavier_uniform(dim, dim, rng),
                ),
                query: store.add(
                    format!("enc.{l}.query"),
                    Tensor::xavier_uniform(1, dim, rng),
                ),
                key: store.add(format!("enc.{l}.key"), Tensor::xavier_uniform(1, dim, rng)),
                edge_embedding: store.add(
                    format!("enc.{l}.edge_emb"),
                    Tensor::xavier_uniform(num_edge_types + 1, head_dim, rng),
                ),
                edge_query: store.add(
                    format!("enc.{l}.edge_query"),
                    Tensor::xavier_uniform(head_dim, heads, rng),
                ),
            })
            .collect();
        Ok(EncoderParameters {
            proj_w,
            proj_b,
            layers,
            dim,
            heads,
        })
    }
}

/// Inverted dropout; a no-op when `rng` is absent or the rate is zero.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.value(x).shape().to_vec();
    let keep = 1.0 - rate;
    let n = tape.value(x).numel();
    let mask: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, mask)
}

/// `H_s`: every node type projected into the shared space, rows in global order.
pub fn project_features(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &EncoderParameters,
    ctx: &GraphContext,
) -> Result<Var> {
    if params.proj_w.len() != ctx.features.len() {
        return Err(Error::Shape {
            op: "project_features",
            lhs: vec![params.proj_w.len()],
            rhs: vec![ctx.features.len()],
        });
    }
    let mut parts = Vec::with_capacity(ctx.features.len());
    for (t, x) in ctx.features.iter().enumerate() {
        let x = tape.constant(x.clone());
        let h = tape.matmul(x, bound[params.proj_w[t]])?;
        let h = tape.add(h, bound[params.proj_b[t]])?;
        parts.push(tape.elu(h));
    }
    tape.concat_rows(&parts)
}

fn head_blocks(dim: usize, heads: usize) -> Tensor {
    let hd = dim / heads;
    let mut t = Tensor::zeros(dim, heads);
    for i in 0..dim {
        t.data_mut()[i * heads + i / hd] = 1.0;
    }
    t
}

pub struct Encoded {
    pub z: Var,
    /// Per layer, attention weights `[messages, heads]`.
    pub attention: Vec<Var>,
}

/// Runs all attention layers over `ctx.message`.
pub fn encode(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &EncoderParameters,
    message: &MessageGraph,
    h_s: Var,
    dropout_rate: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Encoded> {
    let n = message.num_nodes;
    let rows = tape.value(h_s).rows();
    if rows != n {
        return Err(Error::Shape {
            op: "encode",
            lhs: vec![rows],
            rhs: vec![n],
        });
    }
    let blocks = tape.constant(head_blocks(params.dim, params.heads));
    let blocks_t = tape.transpose(blocks)?;
    let mut h = h_s;
    let mut attention = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let h_in = dropout(tape, h, dropout_rate, rng.as_deref_mut())?;
        let wh = tape.matmul(h_in, bound[layer.value])?;
        let q = tape.mul(wh, bound[layer.query])?;
        let sq = tape.matmul(q, blocks)?;
        let k = tape.mul(wh, bound[layer.key])?;
        let sk = tape.matmul(k, blocks)?;
        let se = tape.matmul(bound[layer.edge_embedding], bound[layer.edge_query])?;

        let ld = tape.gather_rows(sq, message.dst.clone())?;
        let ls = tape.gather_rows(sk, message.src.clone())?;
        let le = tape.gather_rows(se, message.etype.clone())?;
        let logits = tape.add(ld, ls)?;
        let logits = tape.add(logits, le)?;
        let logits = tape.leaky_relu(logits, LEAKY_SLOPE);
        let alpha = tape.segment_softmax(logits, message.dst.clone(), n)?;
        attention.push(alpha);

        let alpha = dropout(tape, alpha, dropout_rate, rng.as_deref_mut())?;
        let weights = tape.matmul(alpha, blocks_t)?;
        let src = tape.gather_rows(wh, message.src.clone())?;
        let msg = tape.mul(src, weights)?;
        let agg = tape.scatter_add_rows(msg, message.dst.clone(), n)?;
        let out = tape.add(agg, h)?;
        h = tape.elu(out);
    }
    Ok(Encoded { z: h, attention })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::{Edge, EdgeTypeDef, GraphBuilder, GraphSchema, Task};
    use crate::tensor::grad_check;
    use rand::SeedableRng;

    fn schema() -> GraphSchema {
        GraphSchema::new(
            vec!["A".into(), "B".into()],
            vec![EdgeTypeDef {
                name: "AB".into(),
                source: 0,
                target: 1,
            }],
            0,
            2,
            Task::Multiclass,
        )
        .unwrap()
    }

    fn graph(edges: &[(&str, &str)]) -> crate::hin::HeteroGraph {
        let mut b = GraphBuilder::new(schema());
        for (i, id) in ["a0", "a1", "a2"].iter().enumerate() {
            b.add_node(id, "A", Some(vec![i as f64 * 0.5 - 0.3, 1.0 - i as f64]))
                .unwrap();
        }
        for id in ["b0", "b1"] {
            b.add_node(id, "B", None).unwrap();
        }
        for (u, v) in edges {
            b.add_edge(u, v, "AB").unwrap();
        }
        for (i, id) in ["a0", "a1", "a2"].iter().enumerate() {
            b.set_label(id, vec![i % 2]).unwrap();
        }
        b.build(0).unwrap()
    }

    fn setup(ctx: &GraphContext, heads: usize) -> (ParamStore, EncoderParameters) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EncoderParameters::init(
            &mut store,
            &mut rng,
            &ctx.feature_dims(),
            ctx.num_edge_types,
            4,
            heads,
            2,
        )
        .unwrap();
        (store, p)
    }

    fn run(ctx: &GraphContext, store: &ParamStore, p: &EncoderParameters) -> (Tensor, Vec<Tensor>) {
        let mut tape = Tape::no_grad();
        let bound = store.bind(&mut tape);
        let hs = project_features(&mut tape, &bound, p, ctx).unwrap();
        let enc = encode(&mut tape, &bound, p, &ctx.message, hs, 0.5, None).unwrap();
        let att = enc
            .attention
            .iter()
            .map(|&a| tape.value(a).clone())
            .collect();
        (tape.value(enc.z).clone(), att)
    }

    #[test]
    fn attention_normalises_per_destination() {
        let g = graph(&[("a0", "b0"), ("a1", "b0"), ("a2", "b1"), ("a0", "b1")]);
        let ctx = GraphContext::new(&g);
        let (store, p) = setup(&ctx, 2);
        let (_, att) = run(&ctx, &store, &p);
        for a in att {
            let mut sums = vec![vec![0.0; 2]; ctx.num_nodes];
            for (m, &d) in ctx.message.dst.iter().enumerate() {
                for h in 0..2 {
                    sums[d][h] += a.get(m, h);
                }
            }
            for s in sums.iter().flatten() {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_edges_reduce_to_self_update() {
        let g = graph(&[]);
        let ctx = GraphContext::new(&g);
        let (store, mut p) = setup(&ctx, 1);
        p.layers.truncate(1);
        let w = store.get(p.layers[0].value).clone();
        let (z, _) = run(&ctx, &store, &p);
        let mut tape = Tape::no_grad();
        let bound = store.bind(&mut tape);
        let hs = project_features(&mut tape, &bound, &p, &ctx).unwrap();
        let hs = tape.value(hs).clone();
        for u in 0..ctx.num_nodes {
            for j in 0..4 {
                let wh: f64 = (0..4).map(|i| hs.get(u, i) * w.get(i, j)).sum();
                let x = hs.get(u, j) + wh;
                let want = if x > 0.0 { x } else { x.exp_m1() };
                assert!((z.get(u, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_order_does_not_matter() {
        let e = [("a0", "b0"), ("a1", "b0"), ("a2", "b1"), ("a0", "b1")];
        let g = graph(&e);
        let ctx = GraphContext::new(&g);
        let (store, p) = setup(&ctx, 2);
        let (z1, _) = run(&ctx, &store, &p);
        let mut rev: Vec<Edge> = g.edges().to_vec();
        rev.reverse();
        let ctx2 = GraphContext::with_message_edges(&g, &rev);
        let (z2, _) = run(&ctx2, &store, &p);
        assert!(z1.max_abs_diff(&z2) < 1e-12);
    }

    #[test]
    fn relabelling_nodes_permutes_output() {
        let g = graph(&[("a0", "b0"), ("a1", "b0"), ("a2", "b1")]);
        let ctx = GraphContext::new(&g);
        let (store, p) = setup(&ctx, 2);
        let (z, _) = run(&ctx, &store, &p);
        // swap a0 and a2 within type A
        let perm = [2usize, 1, 0, 3, 4];
        let mut ctx2 = ctx.clone();
        let f = &ctx.features[0];
        let swapped: Vec<f64> = [2, 1, 0].iter().flat_map(|&i| f.row(i).to_vec()).collect();
        ctx2.features[0] = Tensor::from_rows(3, f.cols(), swapped).unwrap();
        let edges: Vec<Edge> = g
            .edges()
            .iter()
            .map(|e| Edge {
                u: perm[e.u],
                v: perm[e.v],
                etype: e.etype,
            })
            .collect();
        ctx2.message = MessageGraph::new(ctx.num_nodes, &edges, ctx.num_edge_types);
        let (z2, _) = run(&ctx2, &store, &p);
        for u in 0..5 {
            for j in 0..4 {
                assert!((z.get(u, j) - z2.get(perm[u], j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn value_matrix_gradient_matches_finite_differences() {
        let g = graph(&[("a0", "b0"), ("a1", "b0"), ("a2", "b1")]);
        let ctx = GraphContext::new(&g);
        let (store, p) = setup(&ctx, 2);
        let w0 = store.get(p.layers[0].value).clone();
        let err = grad_check(
            |tape, w| {
                let bound = store.bind(tape);
                let mut vars = bound.vars().to_vec();
                vars[p.layers[0].value.index()] = w;
                let bound = BoundParams::from_vars(vars);
                let hs = project_features(tape, &bound, &p, &ctx)?;
                let z = encode(tape, &bound, &p, &ctx.message, hs, 0.0, None)?.z;
                let sq = tape.mul(z, z)?;
                Ok(tape.sum(sq))
            },
            &w0,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
