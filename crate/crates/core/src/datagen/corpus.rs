use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatagenError;
use crate::infoguide::text::token_set;
use crate::infoguide::{chunk_id, KeywordSet, Manual};

const PAGES: usize = 3;
const RULE: &str = "==============================";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub out_of_domain: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { seed: 42, out_of_domain: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldQuestion {
    pub question: String,
    pub chunk_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCorpus {
    pub manuals: Vec<Manual>,
    pub keywords: KeywordSet,
    /// Chunk ids of keyword-focused paragraphs, the selection gold labels.
    pub relevant: BTreeSet<String>,
    pub gold: Vec<GoldQuestion>,
    pub out_of_domain: Vec<String>,
}

impl GeneratedCorpus {
    /// Writes `manuals/<name>.txt`, `gold.json` and `keywords.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), DatagenError> {
        let dir = dir.as_ref();
        let mdir = dir.join("manuals");
        fs::create_dir_all(&mdir)?;
        for m in &self.manuals {
            fs::write(mdir.join(format!("{}.txt", m.name)), &m.text)?;
        }
        let gold = serde_json::json!({
            "relevant": self.relevant,
            "gold": self.gold,
            "out_of_domain": self.out_of_domain,
        });
        fs::write(dir.join("gold.json"), to_pretty(&gold)? + "\n")?;
        fs::write(dir.join("keywords.json"), to_pretty(&self.keywords)? + "\n")?;
        Ok(())
    }
}

fn to_pretty<T: Serialize>(v: &T) -> Result<String, DatagenError> {
    serde_json::to_string_pretty(v).map_err(|e| DatagenError::Config(e.to_string()))
}

enum Para {
    Relevant { text: String, question: String },
    Other(String),
}

struct Spec {
    name: &'static str,
    header: &'static str,
    paragraphs: Vec<Para>,
}

fn rel(text: String, question: &str) -> Para {
    Para::Relevant {
        text,
        question: question.to_string(),
    }
}

fn manuals(rng: &mut ChaCha8Rng) -> Vec<Spec> {
    let mut n = |lo: u32, hi: u32| rng.random_range(lo..=hi);
    vec![
        Spec {
            name: "robot_arm",
            header: "RX-160 Robot Arm Manual Rev 3",
            paragraphs: vec![
                rel(
                    "Warning: never enter the robot cell while the arm is powered. A warning beacon flashes when the servo drives are energized. Treat every warning signal as active until the controller shows a safe stop.".into(),
                    "What does the flashing warning beacon on the robot cell mean?",
                ),
                rel(
                    format!("Maintenance of the gripper fingers is due every {} hours. During maintenance replace worn finger pads and grease the pneumatic jaw guides. Record each maintenance task in the robot logbook.", n(4, 9) * 100),
                    "How often do the gripper finger pads need maintenance?",
                ),
                rel(
                    format!("Installation of the robot base requires four M16 anchor bolts tightened to {} Nm. Verify floor flatness before installation and level the base plate with shims. Installation must be finished before connecting the teach pendant.", n(18, 30) * 10),
                    "What torque do the robot base anchor bolts need during installation?",
                ),
                rel(
                    "Inspect the dress pack cables weekly. The inspection covers abrasion at the wrist, loose connectors and kinked air hoses. Replace any cable that fails inspection.".into(),
                    "What does the weekly dress pack cable inspection cover?",
                ),
                rel(
                    "Danger: the elbow joint creates pinch points that can crush hands. Keep clear of the danger zone marked in yellow on the floor. Danger labels must stay legible on all robot links.".into(),
                    "Where is the danger zone of the elbow pinch points marked?",
                ),
                Para::Other("The teach pendant menu lists programs, tool frames, payload data and the operation history in a scrolling table with search and export functions.".into()),
                Para::Other(format!("The arm has six axes and a reach of {} millimetres. Its repeatability is plus or minus 0.02 millimetres.", n(14, 22) * 100)),
                Para::Other("This model was introduced as part of a compact arm family that shares wrist modules and controller firmware.".into()),
                Para::Other(format!("Shipping weight including the pallet is {} kilograms. The controller cabinet is painted light grey.", n(30, 60) * 10)),
            ],
        },
        Spec {
            name: "sensors",
            header: "Sensor Family Handbook Rev 5",
            paragraphs: vec![
                rel(
                    format!("Installation of the proximity sensor needs a mounting gap of {} millimetres to the target. During installation route the sensor cable away from motor leads. Confirm the installation by watching the yellow status lamp.", n(2, 8)),
                    "What mounting gap does the proximity sensor installation need?",
                ),
                rel(
                    "Caution: clean the camera lens only with a dry microfiber cloth. Solvents damage the lens coating, so take caution near the optics. Use caution when turning the focus ring.".into(),
                    "How should the camera lens be cleaned?",
                ),
                rel(
                    format!("Inspect sensor calibration every {} days. An inspection compares the reading against the reference gauge block. Log every failed inspection and recalibrate the sensor.", n(7, 30)),
                    "How is sensor calibration compared against the reference gauge block?",
                ),
                rel(
                    "Maintenance of the pressure transducer includes draining condensate from the port. Plan transducer maintenance together with the compressor. After maintenance confirm the transducer reads zero at ambient pressure.".into(),
                    "What maintenance does the pressure transducer need?",
                ),
                rel(
                    format!("Warning: the laser distance sensor shuts down above {} degrees Celsius. Warning code E7 appears on the display before shutdown. Clear the warning by letting the housing cool.", n(50, 70)),
                    "What does warning code E7 on the laser distance sensor mean?",
                ),
                Para::Other("Sensor housings come in stainless steel or anodized aluminium with connectors rated for the alarm output and analog signals at four to twenty milliamperes.".into()),
                Para::Other(format!("The photoelectric models detect objects up to {} millimetres away and switch in under one millisecond.", n(5, 20) * 100)),
                Para::Other("Cable colours follow the common convention: brown for supply, blue for ground and black for the switching signal.".into()),
                Para::Other("Ordering codes combine the housing size, the sensing range and the connector type into one part number.".into()),
            ],
        },
        Spec {
            name: "conveyor",
            header: "Belt Conveyor BC-40 Manual Rev 2",
            paragraphs: vec![
                rel(
                    format!("Operation of the conveyor starts from the main panel. Before operation confirm the belt is empty and the emergency stop is released. Normal operation runs the belt at {} metres per minute.", n(10, 40)),
                    "How do I start conveyor operation from the main panel?",
                ),
                rel(
                    format!("Belt tension maintenance is due every {} weeks. Maintenance staff adjust the tail pulley until the belt deflects {} millimetres. Log the tension maintenance in the line record.", n(2, 8), n(10, 25)),
                    "How often is belt tension maintenance due on the conveyor?",
                ),
                rel(
                    "Danger: rotating drive rollers can pull in loose clothing. Lock out power before reaching near the danger point at the head pulley. Never remove the roller danger cover while the belt moves.".into(),
                    "Which danger do the rotating drive rollers pose?",
                ),
                rel(
                    "Inspect idler rollers for noise and flat spots. Each inspection round covers the return side of the belt. Replace rollers that fail inspection twice.".into(),
                    "What should the idler roller inspection look for?",
                ),
                rel(
                    format!("Safety light curtains protect the transfer station. Test the safety curtain at the start of each shift. A tripped safety curtain stops the conveyor within {} milliseconds.", n(20, 80)),
                    "How fast does a tripped safety light curtain stop the conveyor?",
                ),
                Para::Other("The belt material is food grade polyurethane with optional cleats, side walls and a service catalogue listing spare parts for every frame length.".into()),
                Para::Other(format!("Frame sections are extruded aluminium in lengths up to {} metres and join with slot nuts.", n(3, 9))),
                Para::Other("Drive units mount at the head or the center of the frame and accept motors from several vendors.".into()),
                Para::Other("Accessories include side rails, end stops, photo eye brackets and transfer plates.".into()),
            ],
        },
        Spec {
            name: "assembly_stand",
            header: "Workstation Stand WS-2 Guide Rev 1",
            paragraphs: vec![
                rel(
                    "Installation of the assembly stand starts by levelling the four feet. Complete installation by bolting the stand to the floor rails. Recheck installation level after moving the stand.".into(),
                    "How is the assembly stand levelled during installation?",
                ),
                rel(
                    format!("Caution: the stand top carries at most {} kilograms. Spread parts evenly and use caution when stacking fixtures. Read the caution label on the leg before loading.", n(8, 20) * 10),
                    "What is the maximum load the stand top carries?",
                ),
                rel(
                    "Fixture clamp maintenance keeps parts aligned. Maintenance consists of cleaning the clamp jaws and tightening loose screws. Plan clamp maintenance at every shift change.".into(),
                    "What does fixture clamp maintenance consist of?",
                ),
                rel(
                    "Warning: release the height adjustment lever only with both hands on the tabletop. The warning tag on the lever shows the locking direction. Ignoring this warning can drop the tabletop suddenly.".into(),
                    "How should the height adjustment lever be released?",
                ),
                rel(
                    "Safety grounding of the stand protects against static discharge. Connect the safety ground strap to the bench terminal. Test safety grounding resistance monthly.".into(),
                    "Where does the static ground strap of the stand connect?",
                ),
                Para::Other("Stand tops are available in beech, steel or antistatic laminate with optional drawers, lamp arms, shelves and a setup guide for accessories.".into()),
                Para::Other(format!("The frame is powder coated steel with a working height between {} and {} millimetres.", n(70, 80) * 10, n(95, 110) * 10)),
                Para::Other("Modular rear panels hold tool holders, bins and cable trays in any arrangement.".into()),
                Para::Other("Stands can be linked side by side with connector plates to form longer benches.".into()),
            ],
        },
    ]
}

/// Candidate out-of-domain questions; those sharing a content token with
/// the corpus are discarded.
const OUT_OF_DOMAIN: [&str; 16] = [
    "Who won the football championship last year?",
    "What is a good recipe for banana bread?",
    "Which novel did Tolstoy write first?",
    "How tall is Mount Everest?",
    "What hours does the museum open on Sunday?",
    "Can you recommend a jazz album for relaxing?",
    "Why is the sky blue during daytime?",
    "Where can I buy cheap flights to Lisbon?",
    "How many moons orbit Jupiter?",
    "What is the capital city of Australia?",
    "Who painted the Mona Lisa?",
    "How do penguins keep their eggs warm?",
    "What vitamins are in oranges?",
    "When did the Roman empire fall?",
    "Which planet has the most volcanoes?",
    "How long should pasta boil?",
];

/// Four plain-text manuals of three pages each. Every page carries a
/// repeated header, a decorative rule and a page-number footer; bodies are
/// one paragraph per chunk in a seed-dependent order.
pub fn gen_corpus(config: &CorpusConfig) -> Result<GeneratedCorpus, DatagenError> {
    if config.out_of_domain == 0 {
        return Err(DatagenError::Config("out_of_domain must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let specs = manuals(&mut rng);
    let mut out = Vec::new();
    let mut relevant = BTreeSet::new();
    let mut gold = Vec::new();
    let mut vocab = BTreeSet::new();
    for spec in specs {
        let mut paras = spec.paragraphs;
        paras.shuffle(&mut rng);
        let per_page = paras.len().div_ceil(PAGES);
        let mut pages = Vec::with_capacity(PAGES);
        for (p, page) in paras.chunks(per_page).enumerate() {
            let mut body = format!("{}\n{RULE}\n\n", spec.header);
            for (i, para) in page.iter().enumerate() {
                let id = chunk_id(spec.name, p * per_page + i);
                let text = match para {
                    Para::Relevant { text, question } => {
                        relevant.insert(id.clone());
                        gold.push(GoldQuestion {
                            question: question.clone(),
                            chunk_id: id,
                        });
                        text
                    }
                    Para::Other(text) => text,
                };
                body.push_str(text);
                body.push_str("\n\n");
            }
            body.push_str(&format!("Page {}\n", p + 1));
            pages.push(body);
        }
        let text = pages.join("\u{c}");
        vocab.extend(token_set(&text));
        out.push(Manual {
            name: spec.name.into(),
            text,
        });
    }
    gold.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
    let mut candidates: Vec<&str> = OUT_OF_DOMAIN
        .iter()
        .copied()
        .filter(|q| token_set(q).is_disjoint(&vocab))
        .collect();
    candidates.shuffle(&mut rng);
    if candidates.len() < config.out_of_domain {
        return Err(DatagenError::Config(format!(
            "only {} out-of-domain questions are disjoint from the corpus",
            candidates.len()
        )));
    }
    candidates.truncate(config.out_of_domain);
    Ok(GeneratedCorpus {
        manuals: out,
        keywords: KeywordSet::default(),
        relevant,
        gold,
        out_of_domain: candidates.into_iter().map(String::from).collect(),
    })
}
