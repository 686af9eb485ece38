//! Renders a clean cloud, a corrupted copy and an imitated copy (coloured by
//! its keep mask) as SVG files.

use std::fs;

use adaptpoint::corruptions::{corrupt_sample, CorruptionSpec, Family, SeverityTable};
use adaptpoint::data_io::{synthetic_dataset, SyntheticConfig};
use adaptpoint::imitator::{ImitateOptions, Imitator, ImitatorConfig};
use adaptpoint::render::{render_svg, Coloring, RenderOptions};
use adaptpoint::RngStream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = synthetic_dataset(&SyntheticConfig {
        samples_per_class: 2,
        ..SyntheticConfig::default()
    })?;
    let cloud = &ds.train[8];
    let out = std::env::temp_dir().join("adaptpoint-render");
    fs::create_dir_all(&out)?;
    let write = |name: &str, svg: String| -> std::io::Result<()> {
        let p = out.join(name);
        fs::write(&p, svg)?;
        println!("wrote {}", p.display());
        Ok(())
    };

    let titled = |t: &str| RenderOptions {
        title: Some(t.into()),
        ..RenderOptions::default()
    };
    write("clean.svg", render_svg(cloud, &titled("clean"))?)?;

    let spec = CorruptionSpec::new(Family::DropLocal, 4)?;
    let dropped = corrupt_sample(cloud, 0, spec, 3, &SeverityTable::default())?;
    write("drop_local_4.svg", render_svg(&dropped, &titled("Drop-L, severity 4"))?)?;

    let imi = Imitator::with_random_heads(ImitatorConfig::default(), &mut RngStream::new(5, 0))?;
    let im = imi.imitate(cloud, ImitateOptions::default(), &mut RngStream::new(5, 1))?;
    let opts = RenderOptions {
        title: Some("imitated (red = kept)".into()),
        coloring: Coloring::Values(im.mask.values.clone()),
        ..RenderOptions::default()
    };
    write("imitated.svg", render_svg(&im.deformed, &opts)?)?;
    Ok(())
}
