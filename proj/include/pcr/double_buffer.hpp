/* Copyright 2026 The PCR Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <array>
#include <condition_variable>
#include <cstddef>
#include <mutex>

namespace pcr {

/// Two reusable slots exchanged between one producer and one consumer.
///
/// The producer fills the idle slot while the consumer drains the ready one;
/// ownership changes hands only through `publish` and `release`, so neither
/// side ever touches a slot the other holds. Slots keep their storage across
/// rounds, which lets buffers grow once and then be recycled.
template <typename T>
class DoubleBuffer {
 public:
  DoubleBuffer() = default;
  DoubleBuffer(const DoubleBuffer&) = delete;
  DoubleBuffer& operator=(const DoubleBuffer&) = delete;

  /// Blocks until a slot is free for filling; returns nullptr once closed.
  T* acquire_for_fill() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || state_[fill_] == State::Free; });
    if (closed_) return nullptr;
    state_[fill_] = State::Filling;
    return &slots_[fill_];
  }

  /// Hands the slot obtained from acquire_for_fill to the consumer.
  void publish() {
    {
      std::lock_guard lock(mu_);
      state_[fill_] = State::Ready;
      fill_ ^= 1;
    }
    cv_.notify_all();
  }

  /// Blocks until a filled slot is available; returns nullptr once the
  /// producer has finished and everything published has been drained, or
  /// after close.
  T* acquire_for_drain() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return state_[drain_] == State::Ready || done_ || closed_; });
    if (closed_ || state_[drain_] != State::Ready) return nullptr;
    state_[drain_] = State::Draining;
    return &slots_[drain_];
  }

  /// Returns the slot obtained from acquire_for_drain to the producer.
  void release() {
    {
      std::lock_guard lock(mu_);
      state_[drain_] = State::Free;
      drain_ ^= 1;
    }
    cv_.notify_all();
  }

  /// Producer side: no more slots will be published.
  void finish() {
    {
      std::lock_guard lock(mu_);
      done_ = true;
    }
    cv_.notify_all();
  }

  /// Either side: abandon the exchange and wake any waiter.
  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  enum class State { Free, Filling, Ready, Draining };

  std::mutex mu_;
  std::condition_variable cv_;
  std::array<T, 2> slots_{};
  std::array<State, 2> state_{State::Free, State::Free};
  std::size_t fill_ = 0;
  std::size_t drain_ = 0;
  bool done_ = false;
  bool closed_ = false;
};

}  // namespace pcr
