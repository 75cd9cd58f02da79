//! Writes the replay fixtures used by the acceptance suite.
//!
//! ```text
//! cargo run -p chainprobe --example author_fixtures -- fixtures/demo_pairs.csv fixtures/demo_replay.jsonl
//! ```
//!
//! Generations are handwritten per mock model. Probe answers come from a
//! hash of the request, biased per probe kind, so reruns reproduce them.

use std::path::PathBuf;
use std::sync::Arc;

use chainprobe::gateway::{
    CompletionRequest, Gateway, GatewayPool, ProviderError, ProviderProfile, RecordingProvider, ScriptedProvider,
};
use chainprobe::model::ModelRef;
use chainprobe::pipeline::{run_full_evaluation, RunConfig, RunSettings};
use chainprobe::prompt::{TemplateId, SLOT_CAUSE};
use sha2::{Digest, Sha256};

fn generation(model: &str, cause: &str) -> Option<&'static str> {
    Some(match (model, cause) {
        ("alpha", "CO2 emissions") => {
            "CO2 emissions <step> increased atmospheric CO2 <step> CO2 absorption by seawater <step> Ocean acidification \
             <chain> CO2 emissions <step> higher CO2 pressure at the sea surface <step> formation of carbonic acid \
             <step> lower seawater pH <step> Ocean acidification \
             <chain> CO2 emissions <step> global warming <step> Ocean acidification"
        }
        ("alpha", "Business") => {
            "Here are the chains:\n\
             Business <step> industrial production <step> fossil fuel combustion <step> greenhouse gas emissions <step> Climate change \
             <chain> Business <step> demand for cheap energy <step> coal power generation <step> greenhouse gas emissions <step> Climate change \
             <chain> Business <step> global shipping <step> Climate change"
        }
        ("alpha", "Deforestation") => {
            "Deforestation <step> loss of root systems <step> soil erosion <step> Nutrient loss in the soils \
             <chain> Deforestation <step> reduced leaf litter <step> less organic matter <step> Nutrient loss in the soils \
             <chain> Deforestation <step> exposed soil <step> heavy rainfall runoff <step> nutrient leaching <step> Nutrient loss in the soils"
        }
        ("beta", "CO2 emissions") => {
            "Chain 1: CO2 emissions <step> carbon dioxide dissolving in oceans <step> Ocean acidification\n\
             <chain>\n\
             Chain 2: CO2 emissions <step> increased atmospheric CO2 <step> CO2 absorption by seawater <step> carbonic acid formation <step> Ocean acidification"
        }
        ("beta", "Business") => {
            "Business <step> consumer demand <step> mass production <step> industrial emissions <step> Climate change \
             <chain> Business <step> land clearing for agriculture <step> loss of carbon sinks <step> Climate change \
             <chain> Business <step> air travel <step> contrail formation <step> warming"
        }
        ("beta", "Deforestation") => {
            "Deforestation <step> soil erosion <step> Nutrient loss in the soils \
             <chain> Deforestation <step> fewer nitrogen fixing plants <step> lower soil nitrogen <step> Nutrient loss in the soils"
        }
        _ => return None,
    })
}

/// Share of yes answers out of 256, per template.
fn yes_threshold(template: TemplateId) -> u8 {
    match template {
        TemplateId::A1 => 220,
        TemplateId::A1P => 200,
        TemplateId::A2 => 40,
        TemplateId::A2P => 64,
        TemplateId::Gen => 0,
    }
}

fn answer(request: &CompletionRequest) -> Result<String, ProviderError> {
    let prompt = &request.prompt;
    if prompt.template_id == TemplateId::Gen {
        return generation(&request.model.model_name, &prompt.slots[SLOT_CAUSE])
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed(format!("no scripted generation for {:?}", prompt.slots)));
    }
    let mut h = Sha256::new();
    h.update(request.model.model_name.as_bytes());
    h.update(prompt.template_id.as_str().as_bytes());
    for (k, v) in &prompt.slots {
        h.update(k.as_bytes());
        h.update(v.as_bytes());
    }
    let byte = h.finalize()[0];
    Ok(if byte < yes_threshold(prompt.template_id) { "Yes." } else { "No." }.to_string())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let input = PathBuf::from(args.next().ok_or("usage: author_fixtures <pairs.csv> <out.jsonl>")?);
    let out = PathBuf::from(args.next().ok_or("usage: author_fixtures <pairs.csv> <out.jsonl>")?);
    if out.exists() {
        std::fs::remove_file(&out)?;
    }
    let store = std::env::temp_dir().join(format!("chainprobe-author-{}", std::process::id()));
    let recorder = RecordingProvider::new(Arc::new(ScriptedProvider::new(answer)), &out)?;
    let gateway = Gateway::new(ProviderProfile::replay(1), Arc::new(recorder))?;
    let models: Vec<ModelRef> = vec!["mock:alpha".parse()?, "mock:beta".parse()?];
    let config = RunConfig {
        input,
        store_root: store.clone(),
        settings: RunSettings::new(models.clone(), models),
        max_parallel: 1,
        allow_partial: false,
        run_id: None,
    };
    let outcome = run_full_evaluation(config, Arc::new(GatewayPool::single(Arc::new(gateway)))).await?;
    std::fs::remove_dir_all(&store)?;
    println!("recorded {} ({})", out.display(), outcome.manifest.run_id);
    Ok(())
}
