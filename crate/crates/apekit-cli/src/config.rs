//! `--config FILE` support. A run file holds one `[estimate]`, `[simulate]`,
//! `[diagnose]` or `[figure1]` section of `key = value` lines (keys are the
//! long flag names, `_` or `-`), plus an optional `[global]` section for
//! `workers`. Flags on the command line override the file.

use std::fmt::Write as _;

const COMMANDS: &[&str] = &["estimate", "simulate", "diagnose", "figure1"];

pub struct RunFile {
    pub command: String,
    pub global: Vec<(String, String)>,
    pub entries: Vec<(String, String)>,
}

pub fn parse_run_file(text: &str) -> Result<RunFile, String> {
    let mut command: Option<String> = None;
    let mut section = String::new();
    let mut global = Vec::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(h) = line.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            let h = h.trim().to_string();
            if h != "global" {
                if !COMMANDS.contains(&h.as_str()) {
                    return Err(format!("line {}: unknown section [{h}]", i + 1));
                }
                if command.replace(h.clone()).is_some() {
                    return Err(format!(
                        "line {}: only one command section is allowed",
                        i + 1
                    ));
                }
            }
            section = h;
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let kv = (k.trim().replace('_', "-"), v.trim().to_string());
        match section.as_str() {
            "" => return Err(format!("line {}: key outside a section", i + 1)),
            "global" => global.push(kv),
            _ => entries.push(kv),
        }
    }
    let command = command.ok_or("run file has no command section")?;
    Ok(RunFile {
        command,
        global,
        entries,
    })
}

fn push_flag(argv: &mut Vec<String>, k: &str, v: &str) {
    match v {
        "true" => argv.push(format!("--{k}")),
        "false" => {}
        _ => {
            argv.push(format!("--{k}"));
            argv.push(v.to_string());
        }
    }
}

/// Rewrite `argv` so that a `--config FILE` turns into explicit flags placed
/// before the user's own, which therefore win.
pub fn expand_args(args: Vec<String>) -> Result<Vec<String>, String> {
    let mut path = None;
    let mut rest = Vec::new();
    let mut it = args.into_iter();
    let bin = it.next().unwrap_or_else(|| "apekit".into());
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or("--config needs a file")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        let mut v = vec![bin];
        v.extend(rest);
        return Ok(v);
    };
    let text =
        std::fs::read_to_string(&path).map_err(|e| format!("cannot read config `{path}`: {e}"))?;
    let rf = parse_run_file(&text)?;
    let mut argv = vec![bin];
    for (k, v) in &rf.global {
        push_flag(&mut argv, k, v);
    }
    // user-level global flags precede the subcommand
    let pos = rest.iter().position(|a| COMMANDS.contains(&a.as_str()));
    let (before, after) = match pos {
        Some(p) if rest[p] == rf.command => (rest[..p].to_vec(), rest[p + 1..].to_vec()),
        Some(p) => {
            return Err(format!(
                "config is for `{}` but `{}` was requested",
                rf.command, rest[p]
            ))
        }
        None => (rest.clone(), Vec::new()),
    };
    argv.extend(before);
    argv.push(rf.command.clone());
    for (k, v) in &rf.entries {
        push_flag(&mut argv, k, v);
    }
    argv.extend(after);
    Ok(argv)
}

/// Serialise resolved settings as a run file.
pub fn render_run_file(command: &str, entries: &[(&str, String)]) -> String {
    let mut s = format!("[{command}]\n");
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let rf = parse_run_file(
            "# x\n[global]\nworkers = 2\n[estimate]\nnu_column = NU\nin_sample = true\n",
        )
        .unwrap();
        assert_eq!(rf.command, "estimate");
        assert_eq!(rf.global, vec![("workers".into(), "2".into())]);
        assert_eq!(rf.entries[0], ("nu-column".into(), "NU".into()));
        assert!(parse_run_file("[bogus]\n").is_err());
        assert!(parse_run_file("a = b\n").is_err());
        assert!(parse_run_file("[estimate]\n[diagnose]\n").is_err());
    }

    #[test]
    fn passthrough_without_config() {
        let a = vec![
            "apekit".to_string(),
            "estimate".into(),
            "--seed".into(),
            "3".into(),
        ];
        assert_eq!(expand_args(a.clone()).unwrap(), a);
    }
}
