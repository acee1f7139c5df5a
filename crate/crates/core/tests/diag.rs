use textra_core::checkpoint::Checkpoint;
use textra_core::model::FdpModel;
use textra_core::synth;
use textra_core::Real;

fn cos(a: &[Real], b: &[Real]) -> Real {
    let d: Real = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: Real = a.iter().map(|x| x * x).sum::<Real>().sqrt();
    let nb: Real = b.iter().map(|x| x * x).sum::<Real>().sqrt();
    d / (na * nb)
}

#[test]
#[ignore]
fn probe_checkpoint() {
    let ck_path = std::env::var("CK").unwrap();
    let gal_path = std::env::var("GAL").unwrap();
    let ck = Checkpoint::load(ck_path.as_ref()).unwrap();
    println!("logit_scale raw: {:?}", ck.array("param.logit_scale").map(|a| a.data()[0]));
    let loaded = FdpModel::from_checkpoint(ck).unwrap();
    let mut model = loaded.model;

    let man = synth::load_manifest(format!("{gal_path}/manifest.tsv").as_ref()).unwrap();
    let mut embs: Vec<(String, Vec<Real>)> = Vec::new();
    for s in man.samples.iter().take(40) {
        let img = textra_core::pixmap::Pixmap::load(&man.image_path(s)).unwrap();
        let e = model.embed_image(&img).unwrap();
        let words: Vec<&str> = s.words.iter().map(|w| w.text.as_str()).collect();
        embs.push((words.join("+"), e.data().to_vec()));
    }
    let (mut sum, mut n, mut mn, mut mx): (Real, usize, Real, Real) = (0.0, 0, 1.0, -1.0);
    for i in 0..embs.len() { for j in 0..i {
        let c = cos(&embs[i].1, &embs[j].1);
        sum += c; n += 1; mn = mn.min(c); mx = mx.max(c);
    }}
    println!("image-image cosine: mean {:.4} min {:.4} max {:.4}", sum / n as Real, mn, mx);

    let texts: Vec<(String, Vec<Real>)> = man.vocab.iter()
        .map(|w| (w.clone(), model.embed_query(w).unwrap().data().to_vec()))
        .collect();
    let (mut sum, mut n, mut mn, mut mx): (Real, usize, Real, Real) = (0.0, 0, 1.0, -1.0);
    for i in 0..texts.len() { for j in 0..i {
        let c = cos(&texts[i].1, &texts[j].1);
        sum += c; n += 1; mn = mn.min(c); mx = mx.max(c);
    }}
    println!("text-text cosine:  mean {:.4} min {:.4} max {:.4}", sum / n as Real, mn, mx);

    let (mut own_sum, mut other_sum, mut n_own, mut n_other) = (0.0, 0.0, 0usize, 0usize);
    for (words, e) in &embs {
        if !words.contains('+') && !words.is_empty() {
            for (w, t) in &texts {
                let c = cos(e, t);
                if w == words { own_sum += c; n_own += 1; } else { other_sum += c; n_other += 1; }
            }
        }
    }
    println!("img-ownword cosine: {:.4} (n={})  img-otherword: {:.4}",
        own_sum / n_own as Real, n_own, other_sum / n_other as Real);
}
