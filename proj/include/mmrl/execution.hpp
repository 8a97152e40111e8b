#pragma once

// Limit-order fill model: adverse fills (price moved through the quote) and
// non-adverse fills (a market order arrived and the thinning draw succeeded),
// combined per side with max so a side trades at most one contract per step.

#include <cstdint>

#include "mmrl/rng.hpp"

namespace mmrl {

struct Quote {
  double bid = 0.0;
  double ask = 0.0;
  double spread = 0.0;
};

/// Which sides carry a resting unit limit order during the step.
struct PostingDecision {
  bool post_ask = false;  // sell at the best ask
  bool post_bid = false;  // buy at the best bid
};

struct MarketOrderArrivals {
  bool m_plus = false;   // buy market order (lifts the ask)
  bool m_minus = false;  // sell market order (hits the bid)
};

/// Per-step Bernoulli arrival probabilities for each market-order side.
struct ArrivalModel {
  double p_buy = 0.5;
  double p_sell = 0.5;
};

/// (ask, bid) indicator pair.
struct SidePair {
  bool ask = false;
  bool bid = false;
};

struct FillOutcome {
  bool ask_fill = false;
  bool bid_fill = false;
  bool ask_adverse = false;
  bool bid_adverse = false;
  bool ask_nonadverse = false;
  bool bid_nonadverse = false;
};

struct LedgerState {
  std::int64_t inventory = 0;
  double cash = 0.0;
  std::int64_t n_plus = 0;   // filled sell orders
  std::int64_t n_minus = 0;  // filled buy orders
  std::int64_t afa = 0;
  std::int64_t afb = 0;
  std::int64_t nfa = 0;
  std::int64_t nfb = 0;

  bool operator==(const LedgerState&) const = default;
};

Quote derive_quotes(double midprice, double spread);

MarketOrderArrivals sample_market_orders(const ArrivalModel& model, Rng& rng);

/// ask side adverse iff an ask is posted and AS(t) < AS(t+1); bid side
/// adverse iff a bid is posted and BS(t) > BS(t+1).
SidePair adverse_fill_indicators(const PostingDecision& posting, const Quote& now,
                                 const Quote& next);

/// Thinning draws for the two sides, taken every step in the order
/// (ask, bid) so that the stream advances identically for every policy.
struct ThinningDraws {
  bool ask = false;
  bool bid = false;
};
ThinningDraws draw_thinning(double p, Rng& rng);

/// Non-adverse candidates: posted side times matching market-order arrival
/// times an independent Bernoulli(p) draw.
SidePair nonadverse_fill_indicators(const PostingDecision& posting,
                                    const MarketOrderArrivals& arrivals,
                                    const ThinningDraws& draws);
SidePair nonadverse_fill_indicators(const PostingDecision& posting,
                                    const MarketOrderArrivals& arrivals, double p, Rng& rng);

FillOutcome combine_fills(const SidePair& adverse, const SidePair& nonadverse);

/// Settles fills at the time-t quotes P +/- spread/2.
LedgerState apply_fills(const LedgerState& ledger, const FillOutcome& fills, double midprice,
                        double spread);

/// Mark-to-market wealth Q P + C.
double wealth(const LedgerState& ledger, double midprice);

}  // namespace mmrl
