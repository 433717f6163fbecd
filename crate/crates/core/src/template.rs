//! Prompt templates bundled from `templates/*.txt` and `{{name}}`
//! substitution.

pub const CLASSIFY_BASELINE: &str = include_str!("../templates/classify_baseline.txt");
pub const CLASSIFY_ICL: &str = include_str!("../templates/classify_icl.txt");
pub const GATE: &str = include_str!("../templates/gate.txt");
pub const GATE_REPAIR: &str = include_str!("../templates/gate_repair.txt");
pub const COST_BENEFIT: &str = include_str!("../templates/cost_benefit.txt");
pub const CLIENT_SYSTEM: &str = include_str!("../templates/client_system.txt");
pub const CLIENT_REPAIR: &str = include_str!("../templates/client_repair.txt");

/// Replaces each `{{name}}` with its value. Substituted text is not scanned
/// again, so user input containing braces passes through untouched. Unknown
/// placeholders are left as they are.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Placeholder names in order of appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        if !names.contains(&&after[..end]) {
            names.push(&after[..end]);
        }
        rest = &after[end + 2..];
    }
    names
}
