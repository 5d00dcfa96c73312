//! nDCG@k for single rankings and whole runs, plus TREC run files.

use std::collections::BTreeMap;

use apeer::corpus::Qrels;
use apeer::metrics::{evaluate_run, ndcg_at_k, EvalOptions, TrecRun};

fn main() -> apeer::Result<()> {
    let grades: BTreeMap<String, u32> = [("A", 3), ("B", 1), ("C", 0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    println!("nDCG@3 of [B, A, C] = {:.6}", ndcg_at_k(&["B", "A", "C"], &grades, 3)?);
    println!("nDCG@3 of [A, B, C] = {:.6}", ndcg_at_k(&["A", "B", "C"], &grades, 3)?);

    let mut qrels = Qrels::new();
    qrels.insert("q1", "A", 3);
    qrels.insert("q1", "B", 1);
    qrels.insert("q2", "X", 2);
    let mut trec = TrecRun::new("demo");
    trec.insert_ranking("q1", &["B".into(), "A".into(), "C".into()]);
    trec.insert_ranking("q2", &["Y".into(), "Z".into(), "X".into()]);

    let eval = evaluate_run(&trec.id_lists(), &qrels, &[1, 5, 10], EvalOptions::default())?;
    for (k, v) in &eval.means {
        println!("mean nDCG@{k} = {v:.4}");
    }
    print!("\n{}", trec.to_trec_string());
    Ok(())
}
