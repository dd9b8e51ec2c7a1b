use std::path::Path;

/// Prompt templates with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub generator: String,
    pub reflector: String,
    pub reflector_prior: String,
    pub curator: String,
    pub format_reminder: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            generator: include_str!("../../templates/generator.v1.txt").into(),
            reflector: include_str!("../../templates/reflector.v1.txt").into(),
            reflector_prior: include_str!("../../templates/reflector_prior.v1.txt").into(),
            curator: include_str!("../../templates/curator.v1.txt").into(),
            format_reminder: include_str!("../../templates/format_reminder.v1.txt").into(),
        }
    }
}

impl Prompts {
    /// Defaults, overridden by any `<name>.v1.txt` found in `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        let mut p = Self::default();
        for (name, slot) in [
            ("generator", &mut p.generator),
            ("reflector", &mut p.reflector),
            ("reflector_prior", &mut p.reflector_prior),
            ("curator", &mut p.curator),
            ("format_reminder", &mut p.format_reminder),
        ] {
            let path = dir.join(format!("{name}.v1.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(p)
    }
}

/// Substitute `{{name}}` placeholders in one pass. Inserted values are not
/// rescanned, and unknown placeholders are left as written.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = after[..end].trim();
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[start..start + 2 + end + 2]),
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
