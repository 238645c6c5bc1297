use std::fmt::Write;

use super::ast::{Branch, ChoiceKind, SessionType};

const INDENT: &str = "  ";

/// Renders a type in the textual syntax, one branch per line for
/// multi-branch choices. Singleton choices print as bare prefixes.
pub fn pretty_print(t: &SessionType) -> String {
    let mut out = String::new();
    write_type(&mut out, t, 0);
    out
}

fn write_type(out: &mut String, t: &SessionType, depth: usize) {
    super::grow(|| write_type_inner(out, t, depth))
}

fn write_type_inner(out: &mut String, t: &SessionType, depth: usize) {
    match t {
        SessionType::End => out.push_str("end"),
        SessionType::Var { name, .. } => out.push_str(name),
        SessionType::Rec { var, body, .. } => {
            let _ = write!(out, "rec {var}.");
            write_type(out, body, depth);
        }
        SessionType::Choice(choice) => {
            let bare = choice.branches.len() == 1
                && ChoiceKind::for_polarity(choice.branches[0].polarity) == choice.kind;
            if bare {
                write_branch(out, &choice.branches[0], depth);
                return;
            }
            out.push(choice.kind.symbol());
            out.push('{');
            for (i, b) in choice.branches.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                out.push_str(&INDENT.repeat(depth + 1));
                write_branch(out, b, depth + 1);
            }
            out.push('\n');
            out.push_str(&INDENT.repeat(depth));
            out.push('}');
        }
    }
}

fn write_branch(out: &mut String, b: &Branch, depth: usize) {
    out.push(b.polarity.symbol());
    out.push_str(&b.label);
    out.push('(');
    if let Some(p) = &b.payload {
        let _ = write!(out, "{}: {}", p.var, p.sort);
    }
    let _ = write!(out, ")[{}].", b.prob);
    write_type(out, &b.cont, depth);
}
