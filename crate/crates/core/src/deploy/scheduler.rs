//! Slot accounting with one FIFO queue per service.
//!
//! A reservation takes one slot on each of `r` distinct resources, all at
//! once or not at all, so two waiting instances can never hold part of what
//! the other needs. Only the head of a service queue may reserve.

use std::collections::{HashMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::{DeploymentPlan, ResourceId, ScheduleError};
use crate::cancel::CancelToken;

const CANCEL_POLL: Duration = Duration::from_millis(25);

#[derive(Debug)]
struct ServiceState {
    free: Vec<usize>,
    slots: usize,
    queue: VecDeque<u64>,
    next_ticket: u64,
}

/// A place in a service's FIFO queue.
#[derive(Debug, PartialEq, Eq)]
pub struct Ticket {
    model: String,
    service: String,
    id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reservation {
    pub model: String,
    pub service: String,
    /// Reserved resource indices; the command runs on `resources[0]`.
    pub resources: Vec<usize>,
}

impl Reservation {
    pub fn rank0(&self) -> ResourceId {
        ResourceId::new(&self.model, &self.service, self.resources[0])
    }

    pub fn resource_ids(&self) -> Vec<ResourceId> {
        self.resources.iter().map(|&i| ResourceId::new(&self.model, &self.service, i)).collect()
    }
}

#[derive(Debug)]
pub struct Scheduler {
    services: Mutex<HashMap<(String, String), ServiceState>>,
    changed: Condvar,
}

impl Scheduler {
    pub fn new(plan: &DeploymentPlan) -> Self {
        let mut services = HashMap::new();
        for model in &plan.models {
            for service in &model.services {
                services.insert(
                    (model.name.clone(), service.name.clone()),
                    ServiceState {
                        free: vec![service.slots_per_resource; service.resource_count],
                        slots: service.slots_per_resource,
                        queue: VecDeque::new(),
                        next_ticket: 0,
                    },
                );
            }
        }
        Scheduler { services: Mutex::new(services), changed: Condvar::new() }
    }

    /// Takes a place in the service's FIFO queue without blocking.
    pub fn enqueue(&self, model: &str, service: &str) -> Result<Ticket, ScheduleError> {
        let mut guard = self.services.lock().expect("scheduler lock poisoned");
        let state = guard
            .get_mut(&(model.to_string(), service.to_string()))
            .ok_or_else(|| ScheduleError::UnknownService(format!("{model}/{service}")))?;
        let id = state.next_ticket;
        state.next_ticket += 1;
        state.queue.push_back(id);
        Ok(Ticket { model: model.to_string(), service: service.to_string(), id })
    }

    /// Gives up a place in the queue that will never be used.
    pub fn withdraw(&self, ticket: Ticket) {
        let mut guard = self.services.lock().expect("scheduler lock poisoned");
        if let Some(state) = guard.get_mut(&(ticket.model, ticket.service)) {
            state.queue.retain(|&t| t != ticket.id);
        }
        self.changed.notify_all();
    }

    /// [`enqueue`](Self::enqueue) followed by [`reserve_ticket`](Self::reserve_ticket).
    pub fn reserve(
        &self,
        model: &str,
        service: &str,
        count: usize,
        locality: &dyn Fn(usize) -> Vec<usize>,
        cancel: &CancelToken,
    ) -> Result<Reservation, ScheduleError> {
        let ticket = self.enqueue(model, service)?;
        self.reserve_ticket(ticket, count, locality, cancel)
    }

    /// Blocks until `count` distinct resources of the service each have a free
    /// slot and the ticket is at the head of the queue. The ticket is given up
    /// on any error.
    ///
    /// `locality` is called under the reservation lock with the resource count
    /// and returns, per resource index, how many of the instance's inputs
    /// already live there.
    pub fn reserve_ticket(
        &self,
        ticket: Ticket,
        count: usize,
        locality: &dyn Fn(usize) -> Vec<usize>,
        cancel: &CancelToken,
    ) -> Result<Reservation, ScheduleError> {
        let key = (ticket.model.clone(), ticket.service.clone());
        let name = format!("{}/{}", ticket.model, ticket.service);
        let mut guard = self.services.lock().expect("scheduler lock poisoned");
        loop {
            let state = guard.get_mut(&key).ok_or_else(|| ScheduleError::UnknownService(name.clone()))?;
            if count == 0 || count > state.free.len() {
                let available = state.free.len();
                state.queue.retain(|&t| t != ticket.id);
                self.changed.notify_all();
                return Err(ScheduleError::TooMany { service: name, requested: count, available });
            }
            if cancel.is_cancelled() {
                state.queue.retain(|&t| t != ticket.id);
                self.changed.notify_all();
                return Err(ScheduleError::Cancelled);
            }
            if state.queue.front() == Some(&ticket.id) {
                let chosen = select_resources(&state.free, count, &locality(state.free.len()));
                if !chosen.is_empty() {
                    for &i in &chosen {
                        state.free[i] -= 1;
                    }
                    state.queue.pop_front();
                    self.changed.notify_all();
                    return Ok(Reservation { model: ticket.model, service: ticket.service, resources: chosen });
                }
            }
            guard = self.changed.wait_timeout(guard, CANCEL_POLL).expect("scheduler lock poisoned").0;
        }
    }

    pub fn release(&self, reservation: &Reservation) {
        let mut guard = self.services.lock().expect("scheduler lock poisoned");
        if let Some(state) =
            guard.get_mut(&(reservation.model.clone(), reservation.service.clone()))
        {
            for &i in &reservation.resources {
                state.free[i] = (state.free[i] + 1).min(state.slots);
            }
        }
        self.changed.notify_all();
    }

    /// Free slots per resource of a service.
    pub fn free_slots(&self, model: &str, service: &str) -> Option<Vec<usize>> {
        let guard = self.services.lock().expect("scheduler lock poisoned");
        guard.get(&(model.to_string(), service.to_string())).map(|s| s.free.clone())
    }
}

/// Picks `count` resources with a free slot, preferring those that already
/// hold more of the instance's inputs, then the lowest index. Returns an empty
/// list when fewer than `count` are free.
pub fn select_resources(free_slots: &[usize], count: usize, locality: &[usize]) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..free_slots.len()).filter(|&i| free_slots[i] > 0).collect();
    if candidates.len() < count {
        return Vec::new();
    }
    candidates.sort_by_key(|&i| (std::cmp::Reverse(locality.get(i).copied().unwrap_or(0)), i));
    candidates.truncate(count);
    candidates
}
