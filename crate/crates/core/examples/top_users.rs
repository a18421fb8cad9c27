//! Scores teachers by difficulty-weighted success and picks the top
//! quartile.

use std::collections::BTreeMap;

use lmpc::data::score_users;

fn main() {
    let mut rates = BTreeMap::new();
    for (task, user, r) in [
        ("easy", "ann", 1.0),
        ("easy", "bo", 1.0),
        ("easy", "cy", 0.5),
        ("hard", "ann", 1.0),
        ("hard", "bo", 0.0),
        ("hard", "dee", 0.0),
        ("medium", "cy", 1.0),
        ("medium", "dee", 0.0),
    ] {
        rates.insert((task.to_string(), user.to_string()), r);
    }
    let t = score_users(&rates, 75.0).unwrap();
    for (task, d) in &t.difficulty {
        println!("task {task:6} difficulty {d:.3}");
    }
    for (user, h) in &t.score {
        let mark = if t.top_users.contains(user) { "*" } else { "" };
        println!("user {user:4} score {h:.3}{mark}");
    }
    println!("cut {:.3}", t.cut);
}
