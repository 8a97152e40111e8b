#include "mmrl/execution.hpp"

#include <stdexcept>
#include <string>

namespace mmrl {

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument(std::string(name) + " must lie in [0, 1], got " +
                                std::to_string(p));
  }
}

}  // namespace

Quote derive_quotes(double midprice, double spread) {
  if (!(spread > 0.0)) {
    throw std::invalid_argument("spread must be positive, got " + std::to_string(spread));
  }
  const double half = 0.5 * spread;
  return Quote{midprice - half, midprice + half, spread};
}

MarketOrderArrivals sample_market_orders(const ArrivalModel& model, Rng& rng) {
  check_probability(model.p_buy, "buy market-order probability");
  check_probability(model.p_sell, "sell market-order probability");
  MarketOrderArrivals out;
  out.m_plus = rng.bernoulli(model.p_buy);
  out.m_minus = rng.bernoulli(model.p_sell);
  return out;
}

SidePair adverse_fill_indicators(const PostingDecision& posting, const Quote& now,
                                 const Quote& next) {
  return SidePair{posting.post_ask && now.ask < next.ask, posting.post_bid && now.bid > next.bid};
}

ThinningDraws draw_thinning(double p, Rng& rng) {
  check_probability(p, "fill probability");
  ThinningDraws d;
  d.ask = rng.bernoulli(p);
  d.bid = rng.bernoulli(p);
  return d;
}

SidePair nonadverse_fill_indicators(const PostingDecision& posting,
                                    const MarketOrderArrivals& arrivals,
                                    const ThinningDraws& draws) {
  return SidePair{posting.post_ask && arrivals.m_plus && draws.ask,
                  posting.post_bid && arrivals.m_minus && draws.bid};
}

SidePair nonadverse_fill_indicators(const PostingDecision& posting,
                                    const MarketOrderArrivals& arrivals, double p, Rng& rng) {
  return nonadverse_fill_indicators(posting, arrivals, draw_thinning(p, rng));
}

FillOutcome combine_fills(const SidePair& adverse, const SidePair& nonadverse) {
  FillOutcome out;
  out.ask_adverse = adverse.ask;
  out.bid_adverse = adverse.bid;
  out.ask_nonadverse = nonadverse.ask;
  out.bid_nonadverse = nonadverse.bid;
  out.ask_fill = adverse.ask || nonadverse.ask;
  out.bid_fill = adverse.bid || nonadverse.bid;
  return out;
}

LedgerState apply_fills(const LedgerState& ledger, const FillOutcome& fills, double midprice,
                        double spread) {
  LedgerState out = ledger;
  const double half = 0.5 * spread;
  if (fills.ask_fill) {
    out.n_plus += 1;
    out.cash += midprice + half;
  }
  if (fills.bid_fill) {
    out.n_minus += 1;
    out.cash -= midprice - half;
  }
  out.afa += fills.ask_adverse ? 1 : 0;
  out.afb += fills.bid_adverse ? 1 : 0;
  out.nfa += fills.ask_nonadverse ? 1 : 0;
  out.nfb += fills.bid_nonadverse ? 1 : 0;
  out.inventory = out.n_minus - out.n_plus;
  return out;
}

double wealth(const LedgerState& ledger, double midprice) {
  return static_cast<double>(ledger.inventory) * midprice + ledger.cash;
}

}  // namespace mmrl
