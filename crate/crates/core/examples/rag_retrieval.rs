//! Builds a retrieval index from instruction/code pairs and picks diverse
//! exemplars for a query.

use lmpc::rag::{exemplar_prompt, retrieve, RagEntry, RagIndex};

fn main() {
    let pairs = [
        ("push the red disc to green", "reach(obj='red', weight=0.5)\nmin_l2_dist(obj1='red', obj2='green', weight=1.0)"),
        ("move red onto the green marker", "reach(obj='red')\nmin_l2_dist(obj1='red', obj2='green')"),
        ("put blue next to purple", "reach(obj='blue')\nmin_l2_dist(obj1='blue', obj2='purple')"),
        ("slide the yellow disc to green", "reach(obj='yellow')\nmin_l2_dist(obj1='yellow', obj2='green')"),
        ("place red at the left edge", "set_target_pos(obj='red', (-0.8, 0.0))"),
        ("bring blue and red together", "min_l2_dist(obj1='blue', obj2='red')"),
    ];
    let index = RagIndex { entries: pairs.iter().map(|(i, c)| RagEntry::new(i, c, "pusher")).collect() };
    let query = "push red to the green marker";
    let picked = retrieve(&index, query, 0.5, 2, "pusher").unwrap();
    println!("query: {query}");
    for e in &picked {
        println!("  {:.3}  {}", e.embedding.cosine(&lmpc::rag::embed(query)), e.instruction);
    }
    println!("{}", exemplar_prompt("# api: ...", &picked));
}
