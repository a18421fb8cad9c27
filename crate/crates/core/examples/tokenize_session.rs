//! Serializes a chat session into the token stream a session model sees,
//! then reads it back.

use lmpc::session::{deserialize_session, serialize_session, TOP_USER};
use lmpc::{ChatSession, Outcome, Rating};

fn main() {
    let mut s = ChatSession::new("demo-0", "# robots: robot", "user-03", "push_red_green", "pusher");
    s.push_turn("push the red disc to the green marker", "reach(obj='red', weight=0.5)", Rating::Unrated);
    s.push_turn(
        "closer to green please",
        "reach(obj='red', weight=0.5)\nmin_l2_dist(obj1='red', obj2='green', weight=1.0)",
        Rating::Good,
    );
    s.outcome = Outcome::Success;

    for uid in [s.user_id.as_str(), TOP_USER] {
        let tokens = serialize_session(&s, uid).expect("valid session");
        println!("conditioned on {uid}: {} tokens", tokens.len());
        println!("  {}", tokens.join(" "));
        let back = deserialize_session(&tokens).expect("round trip");
        assert_eq!(back.turns.len(), s.turns.len());
    }
}
