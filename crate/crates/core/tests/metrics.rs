use npga_core::auction::{Auction, PaymentRule, SettingSpec, UtilityModel};
use npga_core::eval::*;
use npga_core::game::{Game, Strategy, Truthful};
use npga_core::priors::{sample_valuations, PriorSpec};
use npga_core::rng::RngState;
use npga_core::Error;

fn fpsb(n: usize, hi: f64) -> Game {
    Game::new(
        Auction::new(SettingSpec::single_item(n).unwrap(), PaymentRule::FirstPrice).unwrap(),
        PriorSpec::uniform(0.0, hi),
        UtilityModel::RISK_NEUTRAL,
    )
    .unwrap()
}

fn vickrey() -> Game {
    Game::new(
        Auction::new(SettingSpec::single_item(2).unwrap(), PaymentRule::SecondPrice).unwrap(),
        PriorSpec::uniform(0.0, 1.0),
        UtilityModel::RISK_NEUTRAL,
    )
    .unwrap()
}

struct Zero;
impl Strategy for Zero {
    fn bid_into(&self, _: &[f64], b: &mut [f64]) {
        b.fill(0.0);
    }
}

#[test]
fn l_star_of_the_equilibrium_is_exactly_zero() {
    let game = fpsb(3, 10.0);
    let oracle = known_bne(&game).unwrap().unwrap();
    let refs = oracle.strategy_refs();
    let v = sample_valuations(&game.prior, game.spec(), 1 << 14, &RngState::new(3)).unwrap();
    for i in 0..3 {
        assert_eq!(l_star(&game, refs[i], &refs, i, &v).unwrap(), 0.0);
        assert_eq!(strategy_rmse(&game, refs[i], refs[i], i, &v), 0.0);
    }
}

#[test]
fn l_star_of_bidding_zero() {
    // against v/2, a bidder with value v earns v²/2 in equilibrium; zero bids earn nothing
    let game = fpsb(2, 1.0);
    let oracle = known_bne(&game).unwrap().unwrap();
    let refs = oracle.strategy_refs();
    let v = sample_valuations(&game.prior, game.spec(), 1 << 18, &RngState::new(4)).unwrap();
    let l = l_star(&game, &Zero, &refs, 0, &v).unwrap();
    // sd of v²/2 is about 0.149
    assert!((l - 1.0 / 6.0).abs() < 3.0 * 0.149 / 512.0, "{l}");
}

#[test]
fn rmse_of_truthful_against_half() {
    let game = fpsb(2, 1.0);
    let v = sample_valuations(&game.prior, game.spec(), 1 << 18, &RngState::new(5)).unwrap();
    let r = strategy_rmse(&game, &Truthful, &BidFunction::Linear(0.5), 0, &v);
    assert!((r - 1.0 / 12f64.sqrt()).abs() < 2e-3, "{r}");
}

#[test]
fn action_grid_shapes() {
    let g = action_grid(1.2, 1, 256);
    assert_eq!(g.len(), 256);
    assert_eq!(g[0], vec![0.0]);
    assert!((g[255][0] - 1.2).abs() < 1e-15);
    let g2 = action_grid(2.0, 2, 256);
    assert_eq!(g2.len(), 256);
    assert!(g2.iter().all(|p| p.len() == 2));
    assert_eq!(action_grid(1.0, 2, 200).len(), 14 * 14);
}

#[test]
fn lambda_hat_single_valuation() {
    // against truthful opponents a bid w wins with probability w: the best grid bid earns max w(1 − w) = 1/4
    let game = fpsb(2, 1.0);
    let inner = sample_valuations(&game.prior, game.spec(), 1 << 14, &RngState::new(6)).unwrap();
    let opp = game.bids(&[&Truthful, &Truthful], &inner).unwrap();
    let grid = action_grid(1.2, 1, 256);
    let l = lambda_hat(&game, 0, &[1.0], &[0.0], &opp, &grid).unwrap();
    assert!((l - 0.25).abs() < 0.01, "{l}");

    // the grid's best bid has zero loss, every other grid bid has more
    let losses: Vec<f64> = grid.iter().map(|b| lambda_hat(&game, 0, &[0.7], b, &opp, &grid).unwrap()).collect();
    assert_eq!(losses.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
    assert!(losses.iter().all(|&x| x >= 0.0));
}

#[test]
fn truthful_vickrey_has_no_interim_loss() {
    let game = vickrey();
    let s = RngState::new(7);
    let outer = sample_valuations(&game.prior, game.spec(), 512, &s.substream(0)).unwrap();
    let inner = sample_valuations(&game.prior, game.spec(), 2048, &s.substream(1)).unwrap();
    let grid = action_grid(1.2, 1, 256);
    for i in 0..2 {
        let r = interim_metrics(&game, &[&Truthful, &Truthful], i, &outer, &inner, &grid).unwrap();
        assert!(r.eps_hat <= 1e-12, "{}", r.eps_hat);
        assert!(r.l_hat.abs() <= 1e-3, "{}", r.l_hat);
        assert!(r.l_hat <= r.eps_hat);
    }
}

#[test]
fn fast_path_matches_direct_lambdas() {
    for rho in [1.0, 0.5] {
        let spec = SettingSpec::llg();
        let game = Game::new(
            Auction::new(spec.clone(), PaymentRule::NearestVcg).unwrap(),
            PriorSpec::local_global(&spec),
            UtilityModel::new(rho).unwrap(),
        )
        .unwrap();
        let shade = BidFunction::Linear(0.8);
        let strategies: [&dyn Strategy; 3] = [&shade, &shade, &Truthful];
        let s = RngState::new(8);
        let outer = sample_valuations(&game.prior, &spec, 16, &s.substream(0)).unwrap();
        let inner = sample_valuations(&game.prior, &spec, 256, &s.substream(1)).unwrap();
        let opp = game.bids(&strategies, &inner).unwrap();
        let grid = action_grid(1.2, 1, 64);
        let r = interim_metrics(&game, &strategies, 0, &outer, &inner, &grid).unwrap();
        for (h, row) in outer.rows().enumerate() {
            let direct = lambda_hat(&game, 0, &row[0..1], &[0.8 * row[0]], &opp, &grid).unwrap();
            assert!((direct - r.lambdas[h]).abs() < 1e-12, "rho {rho}: {direct} vs {}", r.lambdas[h]);
        }
    }
}

#[test]
fn interim_metrics_reject_correlated_priors() {
    let spec = SettingSpec::llg();
    let game = Game::new(
        Auction::new(spec.clone(), PaymentRule::NearestZero).unwrap(),
        PriorSpec::correlated_llg(0.5),
        UtilityModel::RISK_NEUTRAL,
    )
    .unwrap();
    let v = sample_valuations(&game.prior, &spec, 8, &RngState::new(1)).unwrap();
    let e = interim_metrics(&game, &[&Truthful, &Truthful, &Truthful], 0, &v, &v, &action_grid(1.0, 1, 8)).unwrap_err();
    assert!(matches!(e, Error::Unsupported(_)));
}

#[test]
fn doubling_h_is_consistent() {
    let game = fpsb(2, 1.0);
    let grid = action_grid(1.2, 1, 256);
    let shade = BidFunction::Linear(0.7);
    let run = |h: usize, seed: u64| {
        let s = RngState::new(seed);
        let outer = sample_valuations(&game.prior, game.spec(), h, &s.substream(0)).unwrap();
        let inner = sample_valuations(&game.prior, game.spec(), h, &s.substream(1)).unwrap();
        interim_metrics(&game, &[&shade, &shade], 0, &outer, &inner, &grid).unwrap()
    };
    let a = run(1 << 10, 11);
    let b = run(1 << 11, 12);
    let pooled = (a.l_hat_se.powi(2) + b.l_hat_se.powi(2)).sqrt();
    assert!((a.l_hat - b.l_hat).abs() < 3.0 * pooled, "{} vs {} (se {pooled})", a.l_hat, b.l_hat);
    assert!(a.l_hat <= a.eps_hat && b.l_hat <= b.eps_hat);
}

#[test]
fn evaluate_reports_every_bidder() {
    let game = fpsb(2, 10.0);
    let oracle = known_bne(&game).unwrap().unwrap();
    let cfg = EvalConfig {
        h_primary: 1 << 12,
        h_secondary: 1 << 8,
        ..EvalConfig::default()
    };
    let refs = oracle.strategy_refs();
    let r = evaluate(&game, &refs, Some(&oracle), &cfg, true, &RngState::new(2)).unwrap();
    assert_eq!(r.bidders.len(), 2);
    for m in &r.bidders {
        assert_eq!(m.l_star, Some(0.0));
        assert_eq!(m.rmse, Some(0.0));
        let (l, e) = (m.l_hat.unwrap(), m.eps_hat.unwrap());
        assert!(l <= e && l < 0.05, "{l} {e}");
    }
    let r = evaluate(&game, &refs, None, &cfg, false, &RngState::new(2)).unwrap();
    assert!(r.bidders.iter().all(|m| m.l_star.is_none() && m.l_hat.is_none()));
}

#[test]
fn fpsb_equilibrium_is_payoff_monotone() {
    let game = fpsb(2, 1.0);
    let oracle = known_bne(&game).unwrap().unwrap();
    let refs = oracle.strategy_refs();
    let rng = RngState::new(9);
    let interim = AuctionInterim::new(&game, &refs, 0, 1 << 14, &rng.substream(0)).unwrap();
    let pairs = on_policy_pairs(&game, refs[0], 0, 200, &rng.substream(1)).unwrap();
    let frac = monotonicity_check(&interim, &pairs, 0.01).unwrap();
    assert!(frac >= 0.95, "{frac}");
    assert!(monotonicity_check(&AntiMonotone { dim: 1 }, &pairs, 0.01).unwrap() <= 0.05);
}
