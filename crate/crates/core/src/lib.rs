//! Reachability for vector addition systems with states.
//!
//! The decider works on generalized VASS ([`model::GVass`]): it checks a
//! decidable sufficient condition for reachability (Θ1 on the linear
//! characteristic system, Θ2 by coverability), and when the condition
//! fails it splits the instance into finitely many smaller ones whose
//! reachability is equivalent in disjunction. Sizes decrease in a
//! well-founded multiset order, so the recursion terminates.

pub mod coverability;
pub mod decomposition;
pub mod diophantine;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod relax;
pub mod text;
pub mod trace;
