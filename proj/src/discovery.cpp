#include "acp/discovery.hpp"

#include <algorithm>

namespace acp {

namespace {

constexpr std::string_view kRecordDomain = "acp/dht-record/v1\n";

Bytes record_signing_bytes(const DhtRecord& rec) {
  std::string s(kRecordDomain);
  s += canonical_encode(rec.unsigned_doc());
  return Bytes(s.begin(), s.end());
}

void sort_by_distance(std::vector<Contact>& v, const NodeId& target) {
  std::sort(v.begin(), v.end(), [&](const Contact& a, const Contact& b) { return closer(target, a.id, b.id); });
}

}  // namespace

NodeId node_id_of(const Did& did) { return sha256(did.str()); }

NodeId distance(const NodeId& a, const NodeId& b) {
  NodeId d{};
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] ^ b[i];
  return d;
}

int msb_index(const NodeId& d) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] != 0) {
      int bit = 7;
      while ((d[i] & (1u << bit)) == 0) --bit;
      return static_cast<int>((d.size() - 1 - i) * 8) + bit;
    }
  }
  return -1;
}

bool closer(const NodeId& target, const NodeId& a, const NodeId& b) {
  for (std::size_t i = 0; i < target.size(); ++i) {
    std::uint8_t da = a[i] ^ target[i];
    std::uint8_t db = b[i] ^ target[i];
    if (da != db) return da < db;
  }
  return false;
}

Digest capability_key(std::string_view capability) { return sha256(capability); }
Digest did_key(const Did& did) { return sha256(did.str()); }

// ---------------------------------------------------------------------------
// routing table

RoutingTable::RoutingTable(Did owner, std::size_t k)
    : owner_(std::move(owner)), owner_id_(node_id_of(owner_)), k_(k), buckets_(kIdBits) {}

RoutingTable::Insert RoutingTable::insert(const Did& peer, SimTime now, const std::function<bool(const Did&)>& is_down) {
  if (peer == owner_) throw Error(Errc::SelfInsert, owner_.str());
  NodeId id = node_id_of(peer);
  int b = msb_index(distance(owner_id_, id));
  auto& bucket = buckets_[static_cast<std::size_t>(b)];
  auto it = std::find_if(bucket.begin(), bucket.end(), [&](const PeerRecord& p) { return p.contact.did == peer; });
  if (it != bucket.end()) {
    PeerRecord rec = *it;
    rec.last_seen = now;
    bucket.erase(it);
    bucket.push_back(rec);
    return Insert::Refreshed;
  }
  if (bucket.size() < k_) {
    bucket.push_back({{id, peer}, now});
    return Insert::Added;
  }
  if (is_down && is_down(bucket.front().contact.did)) {
    bucket.erase(bucket.begin());
    bucket.push_back({{id, peer}, now});
    return Insert::Evicted;
  }
  return Insert::Dropped;
}

bool RoutingTable::remove(const Did& peer) {
  if (peer == owner_) return false;
  auto& bucket = buckets_[static_cast<std::size_t>(msb_index(distance(owner_id_, node_id_of(peer))))];
  auto it = std::find_if(bucket.begin(), bucket.end(), [&](const PeerRecord& p) { return p.contact.did == peer; });
  if (it == bucket.end()) return false;
  bucket.erase(it);
  return true;
}

bool RoutingTable::contains(const Did& peer) const {
  if (peer == owner_) return false;
  const auto& bucket = buckets_[static_cast<std::size_t>(msb_index(distance(owner_id_, node_id_of(peer))))];
  return std::any_of(bucket.begin(), bucket.end(), [&](const PeerRecord& p) { return p.contact.did == peer; });
}

std::vector<Contact> RoutingTable::closest(const NodeId& target, std::size_t count) const {
  std::vector<Contact> out = all();
  sort_by_distance(out, target);
  if (out.size() > count) out.resize(count);
  return out;
}

std::vector<Contact> RoutingTable::all() const {
  std::vector<Contact> out;
  for (const auto& bucket : buckets_) {
    for (const auto& p : bucket) out.push_back(p.contact);
  }
  return out;
}

std::size_t RoutingTable::size() const {
  std::size_t n = 0;
  for (const auto& bucket : buckets_) n += bucket.size();
  return n;
}

// ---------------------------------------------------------------------------
// records

Doc DhtRecord::unsigned_doc() const {
  Doc d;
  d.set("card", card);
  d.set("key", to_hex(key));
  d.set("public_key", to_hex(public_key));
  d.set("stored_at", stored_at);
  return d;
}

Doc DhtRecord::to_doc() const {
  Doc d = unsigned_doc();
  d.set("signature", to_hex(publisher_signature));
  return d;
}

DhtRecord DhtRecord::from_doc(const Doc& d) {
  if (!d.is_map() || d.as_map().size() != 5) throw Error(Errc::EncodingError, "record must have 5 fields");
  DhtRecord r;
  r.card = d.at("card");
  r.key = array_from_hex<32>(d.at("key").as_text());
  r.public_key = array_from_hex<32>(d.at("public_key").as_text());
  r.stored_at = d.at("stored_at").as_int();
  r.publisher_signature = array_from_hex<64>(d.at("signature").as_text());
  return r;
}

DhtRecord make_record(const KeyPair& publisher, const AgentCard& card, const Digest& key, SimTime stored_at) {
  DhtRecord r;
  r.key = key;
  r.card = card.to_doc();
  r.public_key = publisher.public_key;
  r.stored_at = stored_at;
  r.publisher_signature = sign(publisher, record_signing_bytes(r));
  return r;
}

AgentCard verify_record(const DhtRecord& rec) {
  AgentCard card;
  try {
    card = validate_card(rec.card);
  } catch (const Error& e) {
    throw Error(Errc::RecordRejected, std::string("card: ") + e.what());
  }
  if (did_from_public_key(rec.public_key) != card.identity) {
    throw Error(Errc::RecordRejected, "card identity is not the publisher");
  }
  bool key_ok = rec.key == did_key(card.identity);
  for (const auto& c : card.capabilities) key_ok = key_ok || rec.key == capability_key(c);
  if (!key_ok) throw Error(Errc::RecordRejected, "key not derived from the card");
  if (rec.stored_at < 0) throw Error(Errc::RecordRejected, "negative stored_at");
  if (!verify(rec.public_key, record_signing_bytes(rec), rec.publisher_signature)) {
    throw Error(Errc::RecordRejected, "bad publisher signature");
  }
  return card;
}

bool record_valid(const DhtRecord& rec) {
  try {
    verify_record(rec);
    return true;
  } catch (const Error&) {
    return false;
  }
}

bool RecordStore::put(const DhtRecord& rec) {
  auto& slot = records_[rec.key];
  std::string who = rec.publisher().str();
  auto it = slot.find(who);
  if (it != slot.end() && it->second.stored_at >= rec.stored_at) return false;
  slot[who] = rec;
  return true;
}

std::vector<DhtRecord> RecordStore::get(const Digest& key) const {
  std::vector<DhtRecord> out;
  auto it = records_.find(key);
  if (it == records_.end()) return out;
  for (const auto& [_, rec] : it->second) out.push_back(rec);
  return out;
}

std::size_t RecordStore::size() const {
  std::size_t n = 0;
  for (const auto& [_, slot] : records_) n += slot.size();
  return n;
}

// ---------------------------------------------------------------------------
// lookup

Lookup::Lookup(NodeId target, const std::vector<Contact>& seeds, bool want_value, const Did& self, std::size_t k,
               std::size_t alpha)
    : target_(target), self_(self), want_value_(want_value), k_(k), alpha_(alpha) {
  for (const auto& c : seeds) learn(c);
}

void Lookup::learn(const Contact& c) {
  if (c.did == self_) return;
  shortlist_.try_emplace(distance(c.id, target_), Entry{c, Mark::Fresh});
}

std::vector<Lookup::Entry*> Lookup::candidates(std::size_t n) {
  std::vector<Entry*> out;
  std::size_t considered = 0;
  for (auto& [_, e] : shortlist_) {
    if (e.mark == Mark::Failed) continue;
    if (considered++ >= k_) break;
    if (e.mark == Mark::Fresh && out.size() < n) out.push_back(&e);
  }
  return out;
}

std::vector<Contact> Lookup::next_round() {
  if (done_ || round_pending()) return {};
  auto picks = candidates(final_sweep_ ? k_ : alpha_);
  if (picks.empty()) {
    done_ = true;
    return {};
  }
  best_before_round_.reset();
  for (const auto& [dist, e] : shortlist_) {
    if (e.mark != Mark::Failed) {
      best_before_round_ = dist;
      break;
    }
  }
  std::vector<Contact> out;
  for (Entry* e : picks) {
    e->mark = Mark::InFlight;
    in_flight_.insert(e->contact.did.str());
    out.push_back(e->contact);
  }
  ++rounds_;
  return out;
}

void Lookup::on_reply(const Did& from, const std::vector<Contact>& peers, const std::vector<DhtRecord>& records) {
  if (in_flight_.erase(from.str()) == 0) return;
  auto it = shortlist_.find(distance(node_id_of(from), target_));
  if (it != shortlist_.end()) it->second.mark = Mark::Answered;
  ++responded_count_;
  for (const auto& p : peers) learn(p);
  for (const auto& r : records) {
    if (r.key != target_ || !record_valid(r)) continue;
    std::string id = to_hex(r.publisher_signature);
    if (record_ids_.insert(id).second) records_.push_back(r);
  }
  close_round_if_done();
}

void Lookup::on_failure(const Did& from) {
  if (in_flight_.erase(from.str()) == 0) return;
  auto it = shortlist_.find(distance(node_id_of(from), target_));
  if (it != shortlist_.end()) it->second.mark = Mark::Failed;
  ++failed_count_;
  close_round_if_done();
}

void Lookup::close_round_if_done() {
  if (round_pending()) return;
  if (want_value_ && !records_.empty()) {
    done_ = true;
    return;
  }
  std::optional<NodeId> best;
  for (const auto& [dist, e] : shortlist_) {
    if (e.mark != Mark::Failed) {
      best = dist;
      break;
    }
  }
  bool improved = best && (!best_before_round_ || *best < *best_before_round_);
  if (improved) {
    final_sweep_ = false;
  } else if (final_sweep_) {
    done_ = true;
  } else {
    final_sweep_ = true;
  }
}

bool Lookup::finished() const { return done_; }

std::vector<Did> Lookup::pending() const {
  std::vector<Did> out;
  for (const auto& d : in_flight_) out.push_back(Did::parse(d));
  return out;
}

std::vector<Contact> Lookup::closest() const {
  std::vector<Contact> out;
  for (const auto& [_, e] : shortlist_) {
    if (e.mark != Mark::Answered) continue;
    out.push_back(e.contact);
    if (out.size() == k_) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// direct network

std::size_t DhtNetwork::add_node(const Did& did, const PublicKey& pk) {
  auto [it, inserted] = index_.try_emplace(did.str(), nodes_.size());
  if (!inserted) return it->second;
  nodes_.emplace_back(did, pk);
  return nodes_.size() - 1;
}

std::optional<std::size_t> DhtNetwork::index_of(const Did& did) const {
  auto it = index_.find(did.str());
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::pair<std::vector<Contact>, std::vector<DhtRecord>> DhtNetwork::answer_find(std::size_t idx, const Digest& key,
                                                                                 bool want_value) const {
  const DhtNode& n = nodes_.at(idx);
  std::vector<DhtRecord> records;
  if (want_value) records = n.store.get(key);
  return {n.table.closest(key, kBucketSize), std::move(records)};
}

FindResult DhtNetwork::run_lookup(std::size_t start, const Digest& key, bool want_value,
                                  const std::function<void(std::size_t, std::size_t)>& on_contact) const {
  const DhtNode& origin = nodes_.at(start);
  FindResult out;
  if (want_value && origin.store.has(key)) {
    out.records = origin.store.get(key);
    return out;
  }
  Lookup lookup(key, origin.table.closest(key, kBucketSize), want_value, origin.did);
  for (;;) {
    auto batch = lookup.next_round();
    if (batch.empty()) break;
    for (const auto& c : batch) {
      auto idx = index_of(c.did);
      if (!idx || nodes_[*idx].down) {
        lookup.on_failure(c.did);
        continue;
      }
      if (on_contact) on_contact(start, *idx);
      auto [peers, records] = answer_find(*idx, key, want_value);
      lookup.on_reply(c.did, peers, records);
    }
  }
  if (lookup.responded() == 0 && lookup.failed() > 0) {
    throw Error(Errc::DiscoveryUnavailable, "no peer answered");
  }
  out.records = lookup.records();
  out.closest = lookup.closest();
  out.hops = lookup.rounds();
  return out;
}

FindResult DhtNetwork::iterative_find(std::size_t start, const Digest& key, bool want_value) const {
  return run_lookup(start, key, want_value, {});
}

void DhtNetwork::join(std::size_t idx, std::size_t via, SimTime now) {
  if (idx == via) return;
  auto is_down = [this](const Did& d) {
    auto i = index_of(d);
    return !i || nodes_[*i].down;
  };
  nodes_[idx].table.insert(nodes_[via].did, now, is_down);
  nodes_[via].table.insert(nodes_[idx].did, now, is_down);
  std::vector<std::size_t> contacted;
  FindResult r = run_lookup(idx, nodes_[idx].id, false, [&](std::size_t, std::size_t peer) { contacted.push_back(peer); });
  for (std::size_t peer : contacted) {
    if (peer == idx) continue;
    nodes_[idx].table.insert(nodes_[peer].did, now, is_down);
    nodes_[peer].table.insert(nodes_[idx].did, now, is_down);
  }
  for (const auto& c : r.closest) {
    if (c.did != nodes_[idx].did) nodes_[idx].table.insert(c.did, now, is_down);
  }
}

std::vector<Did> DhtNetwork::publish(std::size_t publisher, const DhtRecord& rec) {
  std::vector<Contact> targets;
  try {
    targets = iterative_find(publisher, rec.key, false).closest;
  } catch (const Error&) {
    // an isolated publisher can still hold its own record
  }
  targets.push_back(Contact::of(nodes_.at(publisher).did));
  sort_by_distance(targets, rec.key);
  if (targets.size() > kBucketSize) targets.resize(kBucketSize);

  std::vector<Did> stored;
  for (const auto& c : targets) {
    auto idx = index_of(c.did);
    if (!idx || nodes_[*idx].down) continue;
    if (!record_valid(rec)) continue;  // each node checks independently
    nodes_[*idx].store.put(rec);
    stored.push_back(c.did);
  }
  if (stored.empty()) {
    verify_record(rec);  // throws the precise reason
    throw Error(Errc::RecordRejected, "no node accepted the record");
  }
  return stored;
}

std::vector<Did> DhtNetwork::publish_card(std::size_t publisher, const KeyPair& kp, const AgentCard& card, SimTime now) {
  std::vector<Did> all = publish(publisher, make_record(kp, card, did_key(card.identity), now));
  for (const auto& cap : card.capabilities) {
    for (const auto& d : publish(publisher, make_record(kp, card, capability_key(cap), now))) {
      if (std::find(all.begin(), all.end(), d) == all.end()) all.push_back(d);
    }
  }
  return all;
}

std::vector<AgentCard> DhtNetwork::lookup_capability(std::size_t start, std::string_view capability) const {
  return cards_for_capability(iterative_find(start, capability_key(capability), true).records, capability);
}

std::vector<AgentCard> cards_for_capability(const std::vector<DhtRecord>& records, std::string_view capability) {
  std::map<std::string, std::pair<SimTime, AgentCard>> newest;
  for (const auto& r : records) {
    if (r.key != capability_key(capability)) continue;
    AgentCard card;
    try {
      card = verify_record(r);
    } catch (const Error&) {
      continue;
    }
    if (!card.has_capability(capability)) continue;
    auto it = newest.find(card.identity.str());
    if (it == newest.end() || it->second.first < r.stored_at) newest[card.identity.str()] = {r.stored_at, card};
  }
  std::vector<AgentCard> out;
  for (auto& [_, v] : newest) out.push_back(std::move(v.second));
  return out;
}

// ---------------------------------------------------------------------------
// local bus

void LocalBus::attach(const Did& agent, const std::string& segment) { segment_of_[agent.str()] = segment; }

std::optional<std::string> LocalBus::segment_of(const Did& agent) const {
  auto it = segment_of_.find(agent.str());
  if (it == segment_of_.end()) return std::nullopt;
  return it->second;
}

void LocalBus::announce(const DhtRecord& announcement, SimTime at) {
  auto seg = segment_of(announcement.publisher());
  if (seg) inject(*seg, announcement, at);
}

void LocalBus::announce(const KeyPair& kp, const AgentCard& card, SimTime at) {
  announce(make_record(kp, card, did_key(card.identity), at), at);
}

void LocalBus::inject(const std::string& segment, const DhtRecord& announcement, SimTime at) {
  heard_[segment].push_back({announcement, at});
}

std::vector<AgentCard> LocalBus::query(const Did& asker, std::string_view capability, SimTime at,
                                       SimTime timeout) const {
  auto seg = segment_of(asker);
  if (!seg) return {};
  auto it = heard_.find(*seg);
  if (it == heard_.end()) return {};
  std::map<std::string, std::pair<SimTime, AgentCard>> newest;
  for (const auto& h : it->second) {
    if (h.at > at + timeout) continue;
    AgentCard card;
    try {
      card = verify_record(h.record);
    } catch (const Error&) {
      continue;
    }
    if (card.identity == asker || !card.has_capability(capability)) continue;
    if (h.record.key != did_key(card.identity)) continue;
    auto& slot = newest[card.identity.str()];
    if (slot.second.identity.empty() || slot.first < h.record.stored_at) slot = {h.record.stored_at, card};
  }
  std::vector<AgentCard> out;
  for (auto& [_, v] : newest) out.push_back(std::move(v.second));
  return out;
}

}  // namespace acp
