#include "didlink/resolver.hpp"

#include <mutex>

#include "didlink/error.hpp"

namespace didlink {

std::string_view to_string(ResolutionSource source) noexcept {
    return source == ResolutionSource::cache ? "cache" : "method_handler";
}

DidResolver::DidResolver(ClockFn clock) : clock_(std::move(clock)) {
    auto derived = std::make_shared<DerivedMethodHandler>();
    handlers_["key"] = derived;
    handlers_["peer"] = derived;
}

void DidResolver::register_handler(const std::string &method, std::shared_ptr<MethodHandler> handler) {
    std::unique_lock lock(handlers_mutex_);
    handlers_[method] = std::move(handler);
}

bool DidResolver::supports(const std::string &method) const {
    std::shared_lock lock(handlers_mutex_);
    return handlers_.count(method) != 0;
}

std::shared_ptr<MethodHandler> DidResolver::handler_for(const Did &did) const {
    std::shared_lock lock(handlers_mutex_);
    auto it = handlers_.find(did.method());
    if (it == handlers_.end()) throw Error(ErrorCode::UnsupportedMethod, did.method());
    return it->second;
}

ResolutionResult DidResolver::call_handler(MethodHandler &handler, const Did &did, const CachePolicy &policy,
                                           std::chrono::steady_clock::time_point started, bool cache_result) {
    handler_calls_.fetch_add(1);
    auto doc = std::make_shared<const DidDocument>(handler.resolve(did));
    if (!(doc->id() == did)) throw Error(ErrorCode::MalformedDocument, "handler returned a document for another DID");
    auto t = clock_();
    auto fresh_until = t + policy.max_age;
    if (cache_result) {
        std::unique_lock lock(cache_mutex_);
        cache_[did.full()] = Entry{doc, t, fresh_until};
    }
    auto elapsed = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - started);
    return {*doc, ResolutionSource::method_handler, elapsed, fresh_until};
}

ResolutionResult DidResolver::resolve(const Did &did, const CachePolicy &policy) {
    if (policy.max_age.count() < 0) throw Error(ErrorCode::UsageError, "max_age must be non-negative");
    auto started = std::chrono::steady_clock::now();
    auto handler = handler_for(did);

    if (handler->self_contained()) {
        cache_misses_.fetch_add(1);
        return call_handler(*handler, did, policy, started, false);
    }

    if (policy.mode == CacheMode::force_resolve) {
        forced_.fetch_add(1);
        return call_handler(*handler, did, policy, started, true);
    }

    std::optional<Entry> entry;
    {
        std::shared_lock lock(cache_mutex_);
        auto it = cache_.find(did.full());
        if (it != cache_.end()) entry = it->second;
    }
    auto t = clock_();
    if (entry && t < entry->fresh_until && t - entry->stored_at < policy.max_age) {
        cache_hits_.fetch_add(1);
        auto elapsed = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - started);
        return {*entry->document, ResolutionSource::cache, elapsed, entry->fresh_until};
    }
    if (policy.mode == CacheMode::cache_only)
        throw Error(ErrorCode::CacheMiss, entry ? "cached document is stale" : "no cached document");
    cache_misses_.fetch_add(1);
    return call_handler(*handler, did, policy, started, true);
}

void DidResolver::seed_cache(const DidDocument &document, Timestamp fresh_until) {
    std::unique_lock lock(cache_mutex_);
    cache_[document.id().full()] = Entry{std::make_shared<const DidDocument>(document), clock_(), fresh_until};
}

void DidResolver::evict(const Did &did) {
    std::unique_lock lock(cache_mutex_);
    cache_.erase(did.full());
}

void DidResolver::clear_cache() {
    std::unique_lock lock(cache_mutex_);
    cache_.clear();
}

std::optional<DidDocument> DidResolver::cached(const Did &did) const {
    std::shared_lock lock(cache_mutex_);
    auto it = cache_.find(did.full());
    if (it == cache_.end()) return std::nullopt;
    return *it->second.document;
}

} // namespace didlink
