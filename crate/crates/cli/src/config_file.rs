//! Flat `key = value` configuration files. Keys are long flag names without
//! the leading dashes; flags given on the command line win over the file.

use std::fs;
use std::path::Path;

/// Parsed `(key, value)` pairs in file order.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected 'key = value'", i + 1))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Location of the `--config` value in `args`, if present.
fn config_path(args: &[String]) -> Option<&str> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p);
        }
    }
    None
}

fn given_on_command_line(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
}

/// Splices the entries of the `--config` file into `args` right after the
/// subcommand, skipping keys that the command line already sets. Values
/// `true` and `false` toggle switches.
pub fn merge(args: Vec<String>) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(path)).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let pairs = parse(&text).map_err(|e| format!("{path}: {e}"))?;
    let mut injected = Vec::new();
    for (key, value) in pairs {
        if key == "config" || given_on_command_line(&args, &key) {
            continue;
        }
        match value.as_str() {
            "true" => injected.push(format!("--{key}")),
            "false" => {}
            _ => injected.push(format!("--{key}={value}")),
        }
    }
    // args[0] is the program, args[1] the subcommand.
    let at = args.len().min(2);
    let mut out = args[..at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn parses_comments_and_blank_lines() {
        let p = parse("# run\nrank = 3\n\n--beta=-1,0  # two\n").unwrap();
        assert_eq!(p, vec![("rank".into(), "3".into()), ("beta".into(), "-1,0".into())]);
        assert!(parse("rank 3").is_err());
    }

    #[test]
    fn command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.cfg");
        fs::write(&f, "rank = 3\nsegments = 12\nwrite-filtered = true\n").unwrap();
        let args = s(&["bin", "analyze", "--config", f.to_str().unwrap(), "--rank", "5"]);
        let merged = merge(args).unwrap();
        assert_eq!(&merged[..4], &s(&["bin", "analyze", "--segments=12", "--write-filtered"])[..]);
        assert!(!merged.iter().any(|a| a == "--rank=3"));
        assert!(merged.ends_with(&s(&["--rank", "5"])));
    }
}
