//! Plain-text model files: a header line naming the architecture, then `key = value` lines with
//! whitespace-separated arrays. Floats use 17 significant digits, so files round-trip exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::{fmt_f64, parse_f64, KernelBank};

use super::{check_params, Arch, BlockParams, NetworkParams, NetworkSpec};

const MAGIC: &str = "# diffnet-model";

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" ")
}

pub fn render_model(spec: &NetworkSpec, params: &NetworkParams) -> String {
    let mut out = format!(
        "{MAGIC} arch={} blocks={} channels={} flux={} sharing={} stability={} len={}\n",
        spec.arch, spec.blocks, spec.channels, spec.flux, spec.sharing, spec.stability_mode, spec.signal_len
    );
    for (i, b) in params.blocks.iter().enumerate() {
        out += &format!("block.{i}.kernel = {}\n", join(b.kernel.taps()));
        if let Some(w2) = &b.outer {
            out += &format!("block.{i}.outer = {}\n", join(w2.taps()));
            out += &format!("block.{i}.bias_in = {}\n", join(&b.bias_in));
            out += &format!("block.{i}.bias_out = {}\n", join(&b.bias_out));
        }
        out += &format!("block.{i}.lambda = {}\n", fmt_f64(b.lambda));
        out += &format!("block.{i}.tau = {}\n", fmt_f64(b.tau));
        out += &format!("block.{i}.alpha = {}\n", fmt_f64(b.alpha));
    }
    if !params.extrapolation.is_empty() {
        out += &format!("extrapolation = {}\n", join(&params.extrapolation));
    }
    out
}

pub fn write_model(path: &Path, spec: &NetworkSpec, params: &NetworkParams) -> Result<()> {
    fs::write(path, render_model(spec, params)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<(NetworkSpec, NetworkParams)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn header_field<'a>(fields: &'a BTreeMap<&str, &str>, key: &str) -> Result<&'a str> {
    fields
        .get(key)
        .copied()
        .ok_or_else(|| Error::Parse(format!("model header lacks {key}=")))
}

fn parse_count(s: &str, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad {what} {s:?} in model header")))
}

pub fn parse_model(text: &str) -> Result<(NetworkSpec, NetworkParams)> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Parse("missing model header line".into()))?;
    let fields: BTreeMap<&str, &str> = rest
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .collect();
    let arch: Arch = header_field(&fields, "arch")?.parse()?;
    let mut spec = NetworkSpec::new(
        arch,
        parse_count(header_field(&fields, "blocks")?, "blocks")?,
        parse_count(header_field(&fields, "channels")?, "channels")?,
        header_field(&fields, "sharing")?.parse()?,
        header_field(&fields, "flux")?.parse()?,
    );
    if let Some(s) = fields.get("stability") {
        spec.stability_mode = s.parse()?;
    }
    if let Some(s) = fields.get("len") {
        spec.signal_len = parse_count(s, "len")?;
    }
    spec.validate()?;

    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 2)))?;
        let nums = val
            .split_whitespace()
            .map(parse_f64)
            .collect::<Result<Vec<f64>>>()?;
        values.insert(key.trim().to_string(), nums);
    }
    let mut take = |key: String| {
        values
            .remove(&key)
            .ok_or_else(|| Error::Parse(format!("model file lacks {key}")))
    };
    let scalar = |v: Vec<f64>, key: &str| -> Result<f64> {
        match v.as_slice() {
            [x] => Ok(*x),
            _ => Err(Error::Parse(format!("{key} must be a single value"))),
        }
    };
    let c = spec.channels;
    let mut blocks = Vec::with_capacity(spec.stored_blocks());
    for i in 0..spec.stored_blocks() {
        let kernel = KernelBank::new(c, c, take(format!("block.{i}.kernel"))?)?;
        let lambda = scalar(take(format!("block.{i}.lambda"))?, "lambda")?;
        let tau = scalar(take(format!("block.{i}.tau"))?, "tau")?;
        let alpha = scalar(take(format!("block.{i}.alpha"))?, "alpha")?;
        let mut p = if arch == Arch::ResNet {
            let w2 = KernelBank::new(c, c, take(format!("block.{i}.outer"))?)?;
            let b1 = take(format!("block.{i}.bias_in"))?;
            let b2 = take(format!("block.{i}.bias_out"))?;
            BlockParams::standard(kernel, w2, lambda, b1, b2)
        } else {
            BlockParams::symmetric(kernel, lambda, tau)
        };
        p.tau = tau;
        p.alpha = alpha;
        blocks.push(p);
    }
    let extrapolation = if arch == Arch::FsiNet {
        take("extrapolation".into())?
    } else {
        Vec::new()
    };
    if let Some(k) = values.keys().next() {
        return Err(Error::Parse(format!("unexpected key {k}")));
    }
    let params = NetworkParams {
        blocks,
        extrapolation,
    };
    check_params(&spec, &params)?;
    Ok((spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::FluxKind;
    use crate::network::{init_params, InitConfig, Sharing};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact_for_every_arch() {
        for arch in Arch::ALL {
            for sharing in [Sharing::Shared, Sharing::TimeDynamic] {
                let spec = NetworkSpec::new(arch, 3, 2, sharing, FluxKind::Charbonnier);
                let mut p = init_params(&spec, &InitConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
                p.blocks[0].lambda = 1.0 / 3.0;
                let text = render_model(&spec, &p);
                assert!(text.starts_with("# diffnet-model arch="));
                let (s2, p2) = parse_model(&text).unwrap();
                assert_eq!(s2, spec);
                assert_eq!(p2, p);
            }
        }
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(parse_model("").is_err());
        assert!(parse_model("# diffnet-model arch=symresnet blocks=1 channels=1 flux=pm sharing=shared\n").is_err());
        let spec = NetworkSpec::new(Arch::SymResNet, 1, 1, Sharing::Shared, FluxKind::PeronaMalik);
        let p = init_params(&spec, &InitConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let text = render_model(&spec, &p) + "bogus = 1\n";
        assert!(parse_model(&text).is_err());
        let text = render_model(&spec, &p).replace("block.0.tau = ", "block.0.tau = x");
        assert!(parse_model(&text).is_err());
    }
}
