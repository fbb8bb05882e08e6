//! The reader's building blocks on small hand-made inputs.

use ndarray::{array, Array1};

use dstqa::graph::{gate_fuse, graph_embedding};
use dstqa::reader::{att, bidirectional_attention, bilinear, decode_span};

fn main() -> dstqa::Result<()> {
    let context = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
    let query = array![1.0, -1.0];
    let scorer = Array1::from(vec![0.5, 0.5, 0.0, 0.0, 1.0, 1.0]);
    println!("att            {:.3}", att(&context, &query, &scorer)?);
    println!("bilinear       {:.3}", bilinear(&context, &query, &array![[1.0, 0.0], [0.0, 2.0]])?);

    let candidates = array![[1.0, 0.0], [0.0, 1.0]];
    let bi = bidirectional_attention(&context, &candidates, &scorer)?;
    println!("cand weights   {:.3}", bi.cand_weights);
    println!("cand attended  {:.3}", bi.cand_attn);

    let (node_weights, z) = graph_embedding(&candidates, &query, &scorer)?;
    let (gate, fused) = gate_fuse(&query, &z)?;
    println!("node weights   {node_weights:.3}  graph {z:.3}");
    println!("gate           {gate:.3}  fused {fused:.3}");

    let tokens: Vec<String> = "book it for 18:30 please".split(' ').map(String::from).collect();
    let span = decode_span(&[0.1, 0.1, 0.1, 0.6, 0.1], &[0.05, 0.05, 0.1, 0.7, 0.1], &tokens, 10);
    println!("span           {:?}", span.map(|s| s.text));
    Ok(())
}
