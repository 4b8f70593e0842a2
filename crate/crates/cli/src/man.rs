//! Minimal roff man page rendered from the clap command tree.

use clap::Command;

fn esc(s: &str) -> String {
    s.replace('\\', "\\\\").replace('-', "\\-")
}

fn options(out: &mut String, cmd: &Command) {
    for arg in cmd.get_arguments() {
        if arg.is_hide_set() {
            continue;
        }
        let mut flag = match (arg.get_short(), arg.get_long()) {
            (Some(s), Some(l)) => format!("\\fB\\-{s}\\fR, \\fB\\-\\-{}\\fR", esc(l)),
            (None, Some(l)) => format!("\\fB\\-\\-{}\\fR", esc(l)),
            (Some(s), None) => format!("\\fB\\-{s}\\fR"),
            (None, None) => continue,
        };
        if arg.get_action().takes_values() {
            let v = arg.get_value_names().and_then(|v| v.first()).map(|v| v.to_string()).unwrap_or_else(|| arg.get_id().to_string().to_uppercase());
            flag.push_str(&format!(" \\fI{}\\fR", esc(&v)));
        }
        out.push_str(&format!(".TP\n{flag}\n"));
        let mut help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
        let defaults: Vec<String> = arg.get_default_values().iter().map(|d| d.to_string_lossy().into_owned()).collect();
        if !defaults.is_empty() {
            help.push_str(&format!(" [default: {}]", defaults.join(", ")));
        }
        out.push_str(&format!("{}\n", esc(help.trim())));
    }
}

pub fn render(cmd: &Command) -> String {
    let name = cmd.get_name();
    let mut out = format!(".TH {} 1 \"\" \"{} {}\"\n", name.to_uppercase(), name, cmd.get_version().unwrap_or(""));
    out.push_str(&format!(".SH NAME\n{name} \\- {}\n", esc(&cmd.get_about().map(|a| a.to_string()).unwrap_or_default())));
    out.push_str(&format!(".SH SYNOPSIS\n\\fB{name}\\fR \\fICOMMAND\\fR [\\fIOPTIONS\\fR]\n"));
    if let Some(h) = cmd.get_after_help() {
        out.push_str(&format!(".SH MODELS\n{}\n", esc(&h.to_string())));
    }
    out.push_str(".SH COMMANDS\n");
    for sub in cmd.get_subcommands() {
        out.push_str(&format!(".SS {}\n", esc(sub.get_name())));
        if let Some(a) = sub.get_about() {
            out.push_str(&format!("{}\n", esc(&a.to_string())));
        }
        options(&mut out, sub);
    }
    out.push_str(
        ".SH EXIT STATUS\n.TP\n0\nsuccess\n.TP\n2\nusage error\n.TP\n3\ndata error\n.TP\n4\nsolver non\\-convergence\n",
    );
    out
}
